//! Value types for the grid-scheduled linear model family: the schedule
//! grid, per-node local models with their normalization maps, and the
//! bilinear interpolation that turns 99 local fits into one
//! parameter-varying model.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::plant::OperatingPoint;

/// Which input/output set a grid model describes.
///
/// `Emissions` predicts (NOx [ppm], soot [%]) from (p_im [kPa], EGR rate
/// [-], fuel [mm3/st]) in per-node normalized deviation coordinates.
/// `Airpath` predicts (p_im [kPa], EGR rate [-]) from (EGR position [%],
/// VGT position [%]) plus a fuel feedthrough column, in raw deviations
/// from the node equilibrium (all sigma entries are 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpvKind {
    Emissions,
    Airpath,
}

impl LpvKind {
    /// (state count, input count) for this model family.
    pub fn dims(self) -> (usize, usize) {
        match self {
            LpvKind::Emissions => (2, 3),
            LpvKind::Airpath => (2, 2),
        }
    }

    /// Whether local models of this kind carry the fuel feedthrough column.
    pub fn has_fuel_column(self) -> bool {
        matches!(self, LpvKind::Airpath)
    }

    /// Whether this family works on per-channel normalized deviations
    /// (sigma from the node log) or raw deviations (all sigma = 1).
    pub fn normalized_coordinates(self) -> bool {
        matches!(self, LpvKind::Emissions)
    }

    /// Human-readable names of the state channels, for error messages.
    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            LpvKind::Emissions => &["nox", "soot"],
            LpvKind::Airpath => &["p_im", "chi_egr"],
        }
    }

    /// Human-readable names of the input channels, for error messages.
    pub fn input_names(self) -> &'static [&'static str] {
        match self {
            LpvKind::Emissions => &["p_im", "chi_egr", "w_inj"],
            LpvKind::Airpath => &["egr_pos", "vgt_pos"],
        }
    }
}

/// Rectangular scheduling grid over engine speed and fuel quantity.
///
/// The reference layout is 9 speed values by 11 fuel values (99 nodes);
/// both axes must be strictly ascending and are validated to exactly
/// those counts so every artifact carries the full grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleGrid {
    /// Speed axis [rpm], strictly ascending, 9 entries.
    pub speeds_rpm: Vec<f64>,
    /// Fuel axis [mm3/st], strictly ascending, 11 entries.
    pub fuels_mm3: Vec<f64>,
}

/// Required number of speed grid points.
pub const GRID_SPEED_COUNT: usize = 9;
/// Required number of fuel grid points.
pub const GRID_FUEL_COUNT: usize = 11;

impl ScheduleGrid {
    /// Evenly spaced grid spanning the reference engine envelope:
    /// 800..3200 rpm in steps of 300, 0..120 mm3/st in steps of 12.
    pub fn reference() -> Self {
        let speeds_rpm = (0..GRID_SPEED_COUNT).map(|i| 800.0 + 300.0 * i as f64).collect();
        let fuels_mm3 = (0..GRID_FUEL_COUNT).map(|i| 12.0 * i as f64).collect();
        ScheduleGrid {
            speeds_rpm,
            fuels_mm3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.speeds_rpm.len() != GRID_SPEED_COUNT {
            return Err(CoreError::invalid(format!(
                "schedule grid needs {} speed points, got {}",
                GRID_SPEED_COUNT,
                self.speeds_rpm.len()
            )));
        }
        if self.fuels_mm3.len() != GRID_FUEL_COUNT {
            return Err(CoreError::invalid(format!(
                "schedule grid needs {} fuel points, got {}",
                GRID_FUEL_COUNT,
                self.fuels_mm3.len()
            )));
        }
        for axis in [&self.speeds_rpm, &self.fuels_mm3] {
            for v in axis {
                if !v.is_finite() {
                    return Err(CoreError::invalid("schedule grid axis has non-finite entry"));
                }
            }
            for w in axis.windows(2) {
                if w[1] <= w[0] {
                    return Err(CoreError::invalid(
                        "schedule grid axes must be strictly ascending",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Total node count (speeds x fuels).
    pub fn node_count(&self) -> usize {
        self.speeds_rpm.len() * self.fuels_mm3.len()
    }

    /// Flat node index for (speed index, fuel index); fuel varies fastest.
    pub fn index(&self, si: usize, fi: usize) -> usize {
        si * self.fuels_mm3.len() + fi
    }

    /// Operating point at grid node (si, fi).
    pub fn node(&self, si: usize, fi: usize) -> OperatingPoint {
        OperatingPoint::new(self.speeds_rpm[si], self.fuels_mm3[fi])
    }

    /// All nodes in flat-index order.
    pub fn nodes(&self) -> Vec<OperatingPoint> {
        let mut out = Vec::with_capacity(self.node_count());
        for si in 0..self.speeds_rpm.len() {
            for fi in 0..self.fuels_mm3.len() {
                out.push(self.node(si, fi));
            }
        }
        out
    }
}

/// Locate `v` on `axis`: returns the lower cell index `i` and the
/// fractional position `t` in [0,1] within [axis[i], axis[i+1]].
/// Queries outside the axis range are clamped to the boundary.
fn axis_cell(axis: &[f64], v: f64) -> (usize, f64) {
    let last = axis.len() - 1;
    let v = v.clamp(axis[0], axis[last]);
    let mut i = last - 1;
    for k in 0..last {
        if v <= axis[k + 1] {
            i = k;
            break;
        }
    }
    let t = (v - axis[i]) / (axis[i + 1] - axis[i]);
    (i, t)
}

/// One node of the gain-scheduled model: discrete-time dynamics on
/// normalized deviations plus the equilibrium and scale vectors that
/// define the normalization at this node.
///
/// The model reads x~_{k+1} = A x~_k + B u~_k (+ bf * w~_k for kinds
/// with a fuel column), where x~ = (x - x_ss)/sigma_x elementwise and
/// u~ = (u - u_ss)/sigma_u.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    /// State transition matrix on normalized deviations (n x n).
    pub a: DMatrix<f64>,
    /// Input matrix on normalized deviations (n x m).
    pub b: DMatrix<f64>,
    /// Optional fuel feedthrough column (n x 1): response of the states
    /// to the fuel deviation w_inj - w_inj_ss [mm3/st].
    pub bf: Option<DVector<f64>>,
    /// State equilibrium at this node (n).
    pub x_ss: DVector<f64>,
    /// Input equilibrium at this node (m).
    pub u_ss: DVector<f64>,
    /// State scales, all > 0 (n).
    pub sigma_x: DVector<f64>,
    /// Input scales, all > 0 (m).
    pub sigma_u: DVector<f64>,
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

impl LocalModel {
    /// State dimension n.
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m (excluding any fuel column).
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    /// Check shapes, finiteness, positive scales, and local stability.
    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        if self.a.ncols() != n || self.b.nrows() != n {
            return Err(CoreError::invalid("local model A/B shape mismatch"));
        }
        if self.x_ss.len() != n || self.sigma_x.len() != n {
            return Err(CoreError::invalid("local model state vector length mismatch"));
        }
        if self.u_ss.len() != m || self.sigma_u.len() != m {
            return Err(CoreError::invalid("local model input vector length mismatch"));
        }
        if let Some(bf) = &self.bf {
            if bf.len() != n {
                return Err(CoreError::invalid("local model fuel column length mismatch"));
            }
        }
        let finite = self.a.iter().all(|v| v.is_finite())
            && self.b.iter().all(|v| v.is_finite())
            && self.bf.iter().all(|bf| bf.iter().all(|v| v.is_finite()))
            && self.x_ss.iter().all(|v| v.is_finite())
            && self.u_ss.iter().all(|v| v.is_finite())
            && self.sigma_x.iter().all(|v| v.is_finite())
            && self.sigma_u.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::invalid("local model has non-finite entries"));
        }
        if self.sigma_x.iter().chain(self.sigma_u.iter()).any(|s| *s <= 0.0) {
            return Err(CoreError::invalid("local model sigma entries must be > 0"));
        }
        let rho = spectral_radius(&self.a);
        if rho >= 1.0 {
            return Err(CoreError::invalid(format!(
                "local model spectral radius {rho:.6} is not < 1"
            )));
        }
        Ok(())
    }

    /// Normalized state deviation x~ = (x - x_ss)/sigma_x.
    pub fn normalize_x(&self, x: &DVector<f64>) -> DVector<f64> {
        (x - &self.x_ss).component_div(&self.sigma_x)
    }

    /// Inverse of [`normalize_x`](Self::normalize_x).
    pub fn denormalize_x(&self, xn: &DVector<f64>) -> DVector<f64> {
        xn.component_mul(&self.sigma_x) + &self.x_ss
    }

    /// Normalized input deviation u~ = (u - u_ss)/sigma_u.
    pub fn normalize_u(&self, u: &DVector<f64>) -> DVector<f64> {
        (u - &self.u_ss).component_div(&self.sigma_u)
    }

    /// Inverse of [`normalize_u`](Self::normalize_u).
    pub fn denormalize_u(&self, un: &DVector<f64>) -> DVector<f64> {
        un.component_mul(&self.sigma_u) + &self.u_ss
    }

    /// One step of the local dynamics in normalized coordinates.
    /// `wf` is the fuel deviation w_inj - w_inj_ss for models that carry
    /// a fuel column; it is ignored otherwise.
    pub fn step_normalized(&self, xn: &DVector<f64>, un: &DVector<f64>, wf: f64) -> DVector<f64> {
        let mut next = &self.a * xn + &self.b * un;
        if let Some(bf) = &self.bf {
            next += bf * wf;
        }
        next
    }
}

/// A complete gain-scheduled model: one local model per grid node plus
/// the bilinear interpolation that evaluates it anywhere in (and, by
/// clamping, outside) the grid hull.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvGridModel {
    pub kind: LpvKind,
    pub grid: ScheduleGrid,
    /// One entry per node in [`ScheduleGrid::index`] order.
    pub locals: Vec<LocalModel>,
}

impl LpvGridModel {
    pub fn new(kind: LpvKind, grid: ScheduleGrid, locals: Vec<LocalModel>) -> Result<Self> {
        let model = LpvGridModel { kind, grid, locals };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.locals.len() != self.grid.node_count() {
            return Err(CoreError::invalid(format!(
                "grid model needs {} locals, got {}",
                self.grid.node_count(),
                self.locals.len()
            )));
        }
        let (n, m) = self.kind.dims();
        for (i, local) in self.locals.iter().enumerate() {
            local
                .validate()
                .map_err(|e| CoreError::invalid(format!("node {i}: {e}")))?;
            if local.n_states() != n || local.n_inputs() != m {
                return Err(CoreError::invalid(format!(
                    "node {i}: expected dims ({n},{m}), got ({},{})",
                    local.n_states(),
                    local.n_inputs()
                )));
            }
            if local.bf.is_some() != self.kind.has_fuel_column() {
                return Err(CoreError::invalid(format!(
                    "node {i}: fuel column presence does not match model kind"
                )));
            }
        }
        Ok(())
    }

    /// Evaluate the model at `rho` by entrywise bilinear interpolation of
    /// all fields over the surrounding grid cell. Queries outside the
    /// grid hull are clamped to the boundary, so far-out queries return
    /// the nearest edge/corner model. The interpolated model is not
    /// re-validated: convex combinations keep sigma > 0 but are not
    /// guaranteed to keep the spectral radius below 1.
    pub fn interpolate(&self, rho: OperatingPoint) -> LocalModel {
        let (si, ts) = axis_cell(&self.grid.speeds_rpm, rho.speed_rpm);
        let (fi, tf) = axis_cell(&self.grid.fuels_mm3, rho.fuel_mm3);
        let corners = [
            (self.grid.index(si, fi), (1.0 - ts) * (1.0 - tf)),
            (self.grid.index(si, fi + 1), (1.0 - ts) * tf),
            (self.grid.index(si + 1, fi), ts * (1.0 - tf)),
            (self.grid.index(si + 1, fi + 1), ts * tf),
        ];
        let (n, m) = self.kind.dims();
        let mut out = LocalModel {
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, m),
            bf: self.kind.has_fuel_column().then(|| DVector::zeros(n)),
            x_ss: DVector::zeros(n),
            u_ss: DVector::zeros(m),
            sigma_x: DVector::zeros(n),
            sigma_u: DVector::zeros(m),
        };
        for (idx, w) in corners {
            let node = &self.locals[idx];
            out.a += &node.a * w;
            out.b += &node.b * w;
            if let (Some(acc), Some(nb)) = (&mut out.bf, &node.bf) {
                *acc += nb * w;
            }
            out.x_ss += &node.x_ss * w;
            out.u_ss += &node.u_ss * w;
            out.sigma_x += &node.sigma_x * w;
            out.sigma_u += &node.sigma_u * w;
        }
        out
    }
}
