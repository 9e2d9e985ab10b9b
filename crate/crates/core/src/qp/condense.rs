//! Condenses a rate-based prediction model plus stage costs and constraints
//! into a dense QP over `(ΔU, s, ε)`:
//!
//! * `ΔU = (Δu₀ … Δu_{N−1})` — input moves (quadratic cost per move),
//! * `s`  — one auxiliary variable per 1-norm term and stage, with
//!   `s ≥ ±(affine expression)` sign-fixing rows,
//! * `ε`  — one slack per softened constraint row and stage, `ε ≥ 0`,
//!   charged linearly and/or quadratically.
//!
//! Input moves are charged for stages `j = 0..N−1`; every state-dependent
//! term (linear and quadratic cost rows, 1-norm terms, soft and hard rows)
//! is evaluated on the predicted extended states `z₁ … z_N`, so the final
//! state carries the same cost and constraints as the intermediate ones
//! (terminal quadratic terms apply to `z_N` alone).  Quadratic state terms
//! fold into the `ΔU` block of the Hessian through the prediction matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

use super::rate::{PredictionMatrices, RateModel};
use super::types::{Horizon, QpProblem};

/// Cost term `weight · |rowᵀ z_j + offset|` summed over `j = 1..=N`.
#[derive(Debug, Clone)]
pub struct OneNormTerm {
    pub row: DVector<f64>,
    pub offset: f64,
    pub weight: f64,
}

/// Cost term `weight · (rowᵀ z_j + offset)²`; summed over `j = 1..=N` when
/// listed in `quad`, applied to `z_N` alone when listed in `terminal_quad`.
#[derive(Debug, Clone)]
pub struct QuadTerm {
    pub row: DVector<f64>,
    pub offset: f64,
    pub weight: f64,
}

/// Softened constraint `rowᵀ z_j ≤ ub + ε_j` with slack cost
/// `linear_weight · ε_j + quad_weight · ε_j²` and `ε_j ≥ 0`.
#[derive(Debug, Clone)]
pub struct SoftRow {
    pub row: DVector<f64>,
    pub ub: f64,
    pub linear_weight: f64,
    pub quad_weight: f64,
}

/// Hard constraint `rowᵀ z_j ≤ ub` for `j = 1..=N`.
#[derive(Debug, Clone)]
pub struct HardRow {
    pub row: DVector<f64>,
    pub ub: f64,
}

/// Everything needed to build the condensed QP.
#[derive(Debug, Clone)]
pub struct CondenseSpec {
    pub rate: RateModel,
    pub horizon: Horizon,
    /// Extended state `(Δx, x_prev, u_prev)` at the current step.
    pub z0: DVector<f64>,
    /// Quadratic weight on each input move: cost `Δuᵀ R Δu` per stage.
    pub r_du: DMatrix<f64>,
    /// Linear cost row applied to every predicted extended state.
    pub lin_z: DVector<f64>,
    /// Quadratic cost terms applied to every predicted extended state.
    pub quad: Vec<QuadTerm>,
    /// Quadratic cost terms applied to the final predicted state only.
    pub terminal_quad: Vec<QuadTerm>,
    pub one_norm: Vec<OneNormTerm>,
    pub soft: Vec<SoftRow>,
    pub hard: Vec<HardRow>,
    /// Per-component bounds on each input move (±∞ to disable).
    pub du_min: DVector<f64>,
    pub du_max: DVector<f64>,
}

/// Where each block of the decision vector lives.
#[derive(Debug, Clone, Copy)]
pub struct CondensedLayout {
    pub n: usize,
    pub n_u: usize,
    pub n_one: usize,
    pub n_soft: usize,
    pub s_offset: usize,
    pub eps_offset: usize,
    pub dim: usize,
}

impl CondensedLayout {
    /// Index of component `c` of the move Δu_j (stage `j ∈ 0..n`).
    pub fn du_index(&self, j: usize, c: usize) -> usize {
        j * self.n_u + c
    }

    /// Index of the 1-norm auxiliary for term `t` at stage `j ∈ 0..n`
    /// (covering `z_{j+1}`).
    pub fn s_index(&self, j: usize, t: usize) -> usize {
        self.s_offset + j * self.n_one + t
    }

    /// Index of the slack for soft row `r` at stage `j ∈ 0..n`
    /// (covering `z_{j+1}`).
    pub fn eps_index(&self, j: usize, r: usize) -> usize {
        self.eps_offset + j * self.n_soft + r
    }

    /// Extracts the move Δu_j from a solution vector.
    pub fn du_at(&self, w: &DVector<f64>, j: usize) -> DVector<f64> {
        w.rows(j * self.n_u, self.n_u).into_owned()
    }
}

/// The condensed QP plus the pieces needed to interpret its solution.
#[derive(Debug, Clone)]
pub struct Condensed {
    pub qp: QpProblem,
    pub layout: CondensedLayout,
    pub prediction: PredictionMatrices,
    pub z0: DVector<f64>,
}

impl Condensed {
    /// First planned input move.
    pub fn first_du(&self, w: &DVector<f64>) -> DVector<f64> {
        self.layout.du_at(w, 0)
    }

    /// Predicted extended state after `j ∈ 1..=N` steps under the solved
    /// move sequence.
    pub fn predicted_state(&self, w: &DVector<f64>, j: usize) -> DVector<f64> {
        let du_stack = w.rows(0, self.layout.n * self.layout.n_u).into_owned();
        self.prediction.predict(&self.z0, &du_stack, j)
    }
}

fn check_row(row: &DVector<f64>, dim: usize, what: &str) -> Result<()> {
    if row.len() != dim {
        return Err(CoreError::invalid(format!(
            "condense: {what} row has length {}, expected {dim}",
            row.len()
        )));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::invalid(format!(
            "condense: non-finite entry in {what} row"
        )));
    }
    Ok(())
}

/// Builds the dense QP.  See the module docs for the decision-vector layout.
pub fn condense(spec: &CondenseSpec) -> Result<Condensed> {
    spec.horizon.validate()?;
    let n = spec.horizon.n;
    let n_u = spec.rate.n_u;
    let dim_z = spec.rate.dim();
    if spec.z0.len() != dim_z {
        return Err(CoreError::invalid(format!(
            "condense: z0 has length {}, expected {dim_z}",
            spec.z0.len()
        )));
    }
    if spec.r_du.nrows() != n_u || spec.r_du.ncols() != n_u {
        return Err(CoreError::invalid(format!(
            "condense: R is {}x{}, expected {n_u}x{n_u}",
            spec.r_du.nrows(),
            spec.r_du.ncols()
        )));
    }
    check_row(&spec.lin_z, dim_z, "linear cost")?;
    for t in spec.quad.iter().chain(&spec.terminal_quad) {
        check_row(&t.row, dim_z, "quadratic")?;
        if !(t.weight.is_finite() && t.weight >= 0.0) || !t.offset.is_finite() {
            return Err(CoreError::invalid("condense: bad quadratic term"));
        }
    }
    for t in &spec.one_norm {
        check_row(&t.row, dim_z, "1-norm")?;
        if !(t.weight.is_finite() && t.weight >= 0.0) || !t.offset.is_finite() {
            return Err(CoreError::invalid("condense: bad 1-norm term"));
        }
    }
    for s in &spec.soft {
        check_row(&s.row, dim_z, "soft constraint")?;
        let ok = s.ub.is_finite()
            && s.linear_weight.is_finite()
            && s.linear_weight >= 0.0
            && s.quad_weight.is_finite()
            && s.quad_weight >= 0.0;
        if !ok {
            return Err(CoreError::invalid("condense: bad soft constraint"));
        }
    }
    for hc in &spec.hard {
        check_row(&hc.row, dim_z, "hard constraint")?;
        if !hc.ub.is_finite() {
            return Err(CoreError::invalid("condense: bad hard constraint bound"));
        }
    }
    if spec.du_min.len() != n_u || spec.du_max.len() != n_u {
        return Err(CoreError::invalid(
            "condense: move bounds must have one entry per input",
        ));
    }
    for c in 0..n_u {
        if spec.du_min[c] > spec.du_max[c] {
            return Err(CoreError::invalid(format!(
                "condense: move bounds for input {c} are inverted"
            )));
        }
    }

    let n_one = spec.one_norm.len();
    let n_soft = spec.soft.len();
    let layout = CondensedLayout {
        n,
        n_u,
        n_one,
        n_soft,
        s_offset: n * n_u,
        eps_offset: n * n_u + n * n_one,
        dim: n * (n_u + n_one + n_soft),
    };

    let prediction = PredictionMatrices::build(&spec.rate, n)?;
    let phi_z0 = &prediction.phi * &spec.z0;
    let n_du = n * n_u;

    // rowᵀ z_j as a function of ΔU: (rowᵀ Γ_j) ΔU + rowᵀ (Φz₀)_j.
    let stage_row = |row: &DVector<f64>, j: usize| -> (nalgebra::RowDVector<f64>, f64) {
        let gamma_j = prediction.gamma.rows(j * dim_z, dim_z);
        let coeff = row.transpose() * gamma_j;
        let constant = row.dot(&phi_z0.rows(j * dim_z, dim_z).into_owned());
        (coeff, constant)
    };

    // --- objective ------------------------------------------------------
    // The QP minimises ½ wᵀHw + fᵀw, so a stage cost ΔuᵀRΔu enters H as 2R
    // and a slack cost q·ε² enters as 2q.
    let mut hess = DMatrix::zeros(layout.dim, layout.dim);
    let r2 = (&spec.r_du + spec.r_du.transpose()).clone();
    for j in 0..n {
        hess.view_mut((j * n_u, j * n_u), (n_u, n_u)).copy_from(&r2);
    }
    for j in 0..n {
        for (si, s) in spec.soft.iter().enumerate() {
            let k = layout.eps_index(j, si);
            hess[(k, k)] = 2.0 * s.quad_weight;
        }
    }

    let mut grad = DVector::zeros(layout.dim);
    // Σⱼ lin_zᵀ z_j = lin_zᵀ(Φz₀)ⱼ + lin_zᵀ(ΓΔU)ⱼ; the constant part is
    // dropped, the ΔU part is Γᵀ·(stacked lin_z).
    let mut lin_stack = DVector::zeros(n * dim_z);
    for j in 0..n {
        lin_stack.rows_mut(j * dim_z, dim_z).copy_from(&spec.lin_z);
    }
    grad.rows_mut(0, n_du)
        .copy_from(&(prediction.gamma.transpose() * &lin_stack));
    for j in 0..n {
        for (ti, t) in spec.one_norm.iter().enumerate() {
            grad[layout.s_index(j, ti)] = t.weight;
        }
        for (si, s) in spec.soft.iter().enumerate() {
            grad[layout.eps_index(j, si)] = s.linear_weight;
        }
    }

    // weight·(rowᵀz_{j+1} + off)² = weight·(cᵀΔU + b)² → H += 2w·ccᵀ,
    // f += 2w·b·c, constant dropped.
    let add_quad = |hess: &mut DMatrix<f64>, grad: &mut DVector<f64>, t: &QuadTerm, j: usize| {
        let (coeff, constant) = stage_row(&t.row, j);
        let b = constant + t.offset;
        for r in 0..n_du {
            let cr = coeff[r];
            if cr == 0.0 {
                continue;
            }
            for c in 0..n_du {
                hess[(r, c)] += 2.0 * t.weight * cr * coeff[c];
            }
            grad[r] += 2.0 * t.weight * b * cr;
        }
    };
    for j in 0..n {
        for t in &spec.quad {
            add_quad(&mut hess, &mut grad, t, j);
        }
    }
    for t in &spec.terminal_quad {
        add_quad(&mut hess, &mut grad, t, n - 1);
    }

    // --- inequality rows --------------------------------------------------
    let rows_per_stage = 2 * n_one + 2 * n_soft + spec.hard.len();
    let bound_rows: usize = (0..n_u)
        .map(|c| usize::from(spec.du_max[c].is_finite()) + usize::from(spec.du_min[c].is_finite()))
        .sum();
    let m_in = n * rows_per_stage + n * bound_rows;
    let mut g_mat = DMatrix::zeros(m_in, layout.dim);
    let mut h_vec = DVector::zeros(m_in);
    let mut row_idx = 0usize;

    for j in 0..n {
        for (ti, t) in spec.one_norm.iter().enumerate() {
            let (coeff, constant) = stage_row(&t.row, j);
            let s_col = layout.s_index(j, ti);
            // +(rowᵀz + off) − s ≤ 0
            g_mat.view_mut((row_idx, 0), (1, n_du)).copy_from(&coeff);
            g_mat[(row_idx, s_col)] = -1.0;
            h_vec[row_idx] = -(constant + t.offset);
            row_idx += 1;
            // −(rowᵀz + off) − s ≤ 0
            g_mat
                .view_mut((row_idx, 0), (1, n_du))
                .copy_from(&(-&coeff));
            g_mat[(row_idx, s_col)] = -1.0;
            h_vec[row_idx] = constant + t.offset;
            row_idx += 1;
        }
        for (si, s) in spec.soft.iter().enumerate() {
            let (coeff, constant) = stage_row(&s.row, j);
            let e_col = layout.eps_index(j, si);
            // rowᵀz − ε ≤ ub
            g_mat.view_mut((row_idx, 0), (1, n_du)).copy_from(&coeff);
            g_mat[(row_idx, e_col)] = -1.0;
            h_vec[row_idx] = s.ub - constant;
            row_idx += 1;
            // ε ≥ 0
            g_mat[(row_idx, e_col)] = -1.0;
            h_vec[row_idx] = 0.0;
            row_idx += 1;
        }
        for hc in &spec.hard {
            let (coeff, constant) = stage_row(&hc.row, j);
            g_mat.view_mut((row_idx, 0), (1, n_du)).copy_from(&coeff);
            h_vec[row_idx] = hc.ub - constant;
            row_idx += 1;
        }
        for c in 0..n_u {
            let col = layout.du_index(j, c);
            if spec.du_max[c].is_finite() {
                g_mat[(row_idx, col)] = 1.0;
                h_vec[row_idx] = spec.du_max[c];
                row_idx += 1;
            }
            if spec.du_min[c].is_finite() {
                g_mat[(row_idx, col)] = -1.0;
                h_vec[row_idx] = -spec.du_min[c];
                row_idx += 1;
            }
        }
    }
    debug_assert_eq!(row_idx, m_in);

    let qp = QpProblem::new(
        hess,
        grad,
        g_mat,
        h_vec,
        DMatrix::zeros(0, layout.dim),
        DVector::zeros(0),
    )?;

    Ok(Condensed {
        qp,
        layout,
        prediction,
        z0: spec.z0.clone(),
    })
}
