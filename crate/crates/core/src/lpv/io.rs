//! JSON artifact format for grid models: grid axes, per-node matrices,
//! and the equilibrium/scale tables, all in one self-describing file.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lpv::types::{LocalModel, LpvGridModel, LpvKind, ScheduleGrid};

/// Bumped whenever the on-disk layout changes incompatibly.
pub const LPV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct LocalModelJson {
    /// Row-major n x n state matrix.
    a: Vec<Vec<f64>>,
    /// Row-major n x m input matrix.
    b: Vec<Vec<f64>>,
    /// Fuel feedthrough column, if this family carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bf: Option<Vec<f64>>,
    x_ss: Vec<f64>,
    u_ss: Vec<f64>,
    sigma_x: Vec<f64>,
    sigma_u: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LpvFileJson {
    schema_version: u32,
    kind: LpvKind,
    speeds_rpm: Vec<f64>,
    fuels_mm3: Vec<f64>,
    nodes: Vec<LocalModelJson>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(CoreError::artifact(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CoreError::artifact(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn local_to_json(local: &LocalModel) -> LocalModelJson {
    LocalModelJson {
        a: matrix_to_rows(&local.a),
        b: matrix_to_rows(&local.b),
        bf: local.bf.as_ref().map(|v| v.iter().copied().collect()),
        x_ss: local.x_ss.iter().copied().collect(),
        u_ss: local.u_ss.iter().copied().collect(),
        sigma_x: local.sigma_x.iter().copied().collect(),
        sigma_u: local.sigma_u.iter().copied().collect(),
    }
}

fn local_from_json(node: &LocalModelJson, idx: usize) -> Result<LocalModel> {
    let what = |field: &str| format!("node {idx} {field}");
    Ok(LocalModel {
        a: rows_to_matrix(&node.a, &what("a"))?,
        b: rows_to_matrix(&node.b, &what("b"))?,
        bf: node.bf.as_ref().map(|v| DVector::from_vec(v.clone())),
        x_ss: DVector::from_vec(node.x_ss.clone()),
        u_ss: DVector::from_vec(node.u_ss.clone()),
        sigma_x: DVector::from_vec(node.sigma_x.clone()),
        sigma_u: DVector::from_vec(node.sigma_u.clone()),
    })
}

/// Write a grid model to a JSON artifact.
pub fn save_lpv(model: &LpvGridModel, path: &Path) -> Result<()> {
    model.validate()?;
    let file = LpvFileJson {
        schema_version: LPV_SCHEMA_VERSION,
        kind: model.kind,
        speeds_rpm: model.grid.speeds_rpm.clone(),
        fuels_mm3: model.grid.fuels_mm3.clone(),
        nodes: model.locals.iter().map(local_to_json).collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Read and fully validate a grid model artifact.
pub fn load_lpv(path: &Path) -> Result<LpvGridModel> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CoreError::artifact(format!("cannot read model file {}: {e}", path.display()))
    })?;
    let file: LpvFileJson = serde_json::from_str(&text)
        .map_err(|e| CoreError::artifact(format!("{}: {e}", path.display())))?;
    if file.schema_version != LPV_SCHEMA_VERSION {
        return Err(CoreError::artifact(format!(
            "unsupported model schema version {} (expected {LPV_SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let grid = ScheduleGrid {
        speeds_rpm: file.speeds_rpm,
        fuels_mm3: file.fuels_mm3,
    };
    let locals = file
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| local_from_json(n, i))
        .collect::<Result<Vec<_>>>()?;
    LpvGridModel::new(file.kind, grid, locals)
        .map_err(|e| CoreError::artifact(format!("{}: {e}", path.display())))
}
