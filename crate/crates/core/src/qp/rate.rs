//! Rate-based (velocity-form) prediction model.
//!
//! A discrete linear model `x⁺ = Ã x + B̃ u (+ affine offset)` is rewritten in
//! terms of state increments Δx and input increments Δu over the extended
//! state `z = (Δx, x_prev, u_prev)`:
//!
//! ```text
//!        ⎡Ã 0 0⎤         ⎡B̃⎤
//! A_ext = ⎢I I 0⎥,  B_ext = ⎢0⎥,   z⁺ = A_ext z + B_ext Δu.
//!        ⎣0 0 I⎦         ⎣I⎦
//! ```
//!
//! Differencing cancels any constant offset in the original recursion, so
//! predictions depend only on (Ã, B̃) and the measured history — the basis for
//! offset-free control.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Velocity-form model with extended state `(Δx, x_prev, u_prev)`.
#[derive(Debug, Clone)]
pub struct RateModel {
    pub n_x: usize,
    pub n_u: usize,
    pub a_ext: DMatrix<f64>,
    pub b_ext: DMatrix<f64>,
}

impl RateModel {
    /// Extended state dimension `2·n_x + n_u`.
    pub fn dim(&self) -> usize {
        2 * self.n_x + self.n_u
    }

    /// Assembles the extended state from its three components.
    pub fn initial_state(
        &self,
        delta_x: &DVector<f64>,
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if delta_x.len() != self.n_x || x_prev.len() != self.n_x || u_prev.len() != self.n_u {
            return Err(CoreError::invalid(
                "rate model: component dimensions do not match",
            ));
        }
        let mut z = DVector::zeros(self.dim());
        z.rows_mut(0, self.n_x).copy_from(delta_x);
        z.rows_mut(self.n_x, self.n_x).copy_from(x_prev);
        z.rows_mut(2 * self.n_x, self.n_u).copy_from(u_prev);
        Ok(z)
    }

    /// One extended-state step `z⁺ = A_ext z + B_ext Δu`.
    pub fn step(&self, z: &DVector<f64>, du: &DVector<f64>) -> DVector<f64> {
        &self.a_ext * z + &self.b_ext * du
    }

    /// Selection row for the absolute state `xᵢ = Δxᵢ + x_prevᵢ`.
    ///
    /// Applied to the extended state after `j ≥ 1` steps this reads out the
    /// absolute state reached at step `j`.
    pub fn row_abs_state(&self, i: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.dim());
        row[i] = 1.0;
        row[self.n_x + i] = 1.0;
        row
    }

    /// Selection row for the state increment Δxᵢ.
    pub fn row_delta_state(&self, i: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.dim());
        row[i] = 1.0;
        row
    }

    /// Selection row for the input component `uᵢ`.
    ///
    /// Applied to the extended state after `j ≥ 1` steps this reads out the
    /// input held during step `j − 1 → j`.
    pub fn row_input(&self, i: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.dim());
        row[2 * self.n_x + i] = 1.0;
        row
    }
}

/// Builds the velocity-form model from the one-step matrices.
pub fn make_rate_model(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<RateModel> {
    let n_x = a.nrows();
    if n_x == 0 || a.ncols() != n_x {
        return Err(CoreError::invalid(format!(
            "rate model: A must be square and non-empty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if b.nrows() != n_x || b.ncols() == 0 {
        return Err(CoreError::invalid(format!(
            "rate model: B is {}x{}, expected {} rows and at least one column",
            b.nrows(),
            b.ncols(),
            n_x
        )));
    }
    if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::invalid("rate model: non-finite matrix entry"));
    }
    let n_u = b.ncols();
    let dim = 2 * n_x + n_u;

    let mut a_ext = DMatrix::zeros(dim, dim);
    a_ext.view_mut((0, 0), (n_x, n_x)).copy_from(a);
    for i in 0..n_x {
        a_ext[(n_x + i, i)] = 1.0;
        a_ext[(n_x + i, n_x + i)] = 1.0;
    }
    for i in 0..n_u {
        a_ext[(2 * n_x + i, 2 * n_x + i)] = 1.0;
    }

    let mut b_ext = DMatrix::zeros(dim, n_u);
    b_ext.view_mut((0, 0), (n_x, n_u)).copy_from(b);
    for i in 0..n_u {
        b_ext[(2 * n_x + i, i)] = 1.0;
    }

    Ok(RateModel {
        n_x,
        n_u,
        a_ext,
        b_ext,
    })
}

/// Stacked prediction matrices over a horizon of `n` steps:
///
/// `Z = Φ z₀ + Γ ΔU`, where `Z = (z₁, …, z_N)` and `ΔU = (Δu₀, …, Δu_{N−1})`.
#[derive(Debug, Clone)]
pub struct PredictionMatrices {
    pub n: usize,
    pub dim: usize,
    pub n_u: usize,
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl PredictionMatrices {
    pub fn build(rate: &RateModel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(CoreError::invalid("prediction horizon must be at least 1"));
        }
        let dim = rate.dim();
        let n_u = rate.n_u;
        let mut phi = DMatrix::zeros(n * dim, dim);
        let mut gamma = DMatrix::zeros(n * dim, n * n_u);

        // Row block j holds z_{j+1}: built recursively from row block j−1.
        let mut a_pow = rate.a_ext.clone();
        phi.view_mut((0, 0), (dim, dim)).copy_from(&rate.a_ext);
        gamma.view_mut((0, 0), (dim, n_u)).copy_from(&rate.b_ext);
        for j in 1..n {
            a_pow = &rate.a_ext * &a_pow;
            phi.view_mut((j * dim, 0), (dim, dim)).copy_from(&a_pow);
            for i in 0..j {
                let prev = gamma
                    .view(((j - 1) * dim, i * n_u), (dim, n_u))
                    .into_owned();
                gamma
                    .view_mut((j * dim, i * n_u), (dim, n_u))
                    .copy_from(&(&rate.a_ext * prev));
            }
            gamma
                .view_mut((j * dim, j * n_u), (dim, n_u))
                .copy_from(&rate.b_ext);
        }

        Ok(PredictionMatrices {
            n,
            dim,
            n_u,
            phi,
            gamma,
        })
    }

    /// Predicted extended state after `j ∈ 1..=n` steps.
    pub fn predict(&self, z0: &DVector<f64>, du_stack: &DVector<f64>, j: usize) -> DVector<f64> {
        let base = (j - 1) * self.dim;
        let phi_j = self.phi.rows(base, self.dim);
        let gamma_j = self.gamma.rows(base, self.dim);
        phi_j * z0 + gamma_j * du_stack
    }
}
