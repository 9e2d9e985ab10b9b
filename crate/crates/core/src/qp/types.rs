//! Dense convex quadratic-program container and solution types.

use nalgebra::{DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Absolute Tikhonov ridge added to the Hessian inside the solver.  It makes
/// the regularised problem strictly convex, so degenerate problems resolve to
/// the minimum-norm optimiser instead of an arbitrary point on a face.
pub const QP_RIDGE: f64 = 1e-10;

/// Hard cap on active-set changes before the solver reports failure.
pub const QP_MAX_ITERATIONS: usize = 500;

/// Residual level the KKT diagnostics of an optimal solution are expected to
/// satisfy (checked by tests, not enforced at runtime).
pub const KKT_TOLERANCE: f64 = 1e-8;

/// An optimal point whose infinity norm exceeds this is reported as an
/// unbounded descent direction that only the ridge kept finite.
pub const UNBOUNDED_NORM: f64 = 1e8;

/// Dense convex QP
///
/// minimise   ½ wᵀ H w + fᵀ w
/// subject to G w ≤ h,   E w = d.
///
/// `H` must be symmetric positive semidefinite; both properties are validated
/// (to 1e-10, relative to the matrix scale) on construction.
#[derive(Debug, Clone)]
pub struct QpProblem {
    hess: DMatrix<f64>,
    grad: DVector<f64>,
    g_ineq: DMatrix<f64>,
    h_ineq: DVector<f64>,
    e_eq: DMatrix<f64>,
    d_eq: DVector<f64>,
}

impl QpProblem {
    /// Validates shapes, finiteness, symmetry and positive semidefiniteness,
    /// then stores the symmetrised Hessian.
    pub fn new(
        hess: DMatrix<f64>,
        grad: DVector<f64>,
        g_ineq: DMatrix<f64>,
        h_ineq: DVector<f64>,
        e_eq: DMatrix<f64>,
        d_eq: DVector<f64>,
    ) -> Result<Self> {
        let n = grad.len();
        if n == 0 {
            return Err(CoreError::invalid("qp: empty decision vector"));
        }
        if hess.nrows() != n || hess.ncols() != n {
            return Err(CoreError::invalid(format!(
                "qp: hessian is {}x{}, expected {}x{}",
                hess.nrows(),
                hess.ncols(),
                n,
                n
            )));
        }
        if g_ineq.ncols() != n && g_ineq.nrows() > 0 {
            return Err(CoreError::invalid(format!(
                "qp: inequality matrix has {} columns, expected {}",
                g_ineq.ncols(),
                n
            )));
        }
        if g_ineq.nrows() != h_ineq.len() {
            return Err(CoreError::invalid(format!(
                "qp: {} inequality rows but {} right-hand sides",
                g_ineq.nrows(),
                h_ineq.len()
            )));
        }
        if e_eq.ncols() != n && e_eq.nrows() > 0 {
            return Err(CoreError::invalid(format!(
                "qp: equality matrix has {} columns, expected {}",
                e_eq.ncols(),
                n
            )));
        }
        if e_eq.nrows() != d_eq.len() {
            return Err(CoreError::invalid(format!(
                "qp: {} equality rows but {} right-hand sides",
                e_eq.nrows(),
                d_eq.len()
            )));
        }
        let finite = hess.iter().all(|v| v.is_finite())
            && grad.iter().all(|v| v.is_finite())
            && g_ineq.iter().all(|v| v.is_finite())
            && h_ineq.iter().all(|v| v.is_finite())
            && e_eq.iter().all(|v| v.is_finite())
            && d_eq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CoreError::invalid("qp: non-finite entry in problem data"));
        }

        let scale = 1.0 + hess.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let asym = (&hess - hess.transpose())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if asym > 1e-10 * scale {
            return Err(CoreError::invalid(format!(
                "qp: hessian asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        let hess = (&hess + hess.transpose()) * 0.5;

        // Positive semidefiniteness: a PSD matrix shifted by a small positive
        // multiple of the identity is positive definite, so its Cholesky
        // factorisation must succeed.
        let shift = 1e-10 * scale;
        let mut shifted = hess.clone();
        for i in 0..n {
            shifted[(i, i)] += shift;
        }
        if nalgebra::Cholesky::new(shifted).is_none() {
            return Err(CoreError::invalid(
                "qp: hessian is not positive semidefinite",
            ));
        }

        Ok(QpProblem {
            hess,
            grad,
            g_ineq,
            h_ineq,
            e_eq,
            d_eq,
        })
    }

    /// Number of decision variables.
    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    /// Number of inequality rows.
    pub fn n_ineq(&self) -> usize {
        self.g_ineq.nrows()
    }

    /// Number of equality rows.
    pub fn n_eq(&self) -> usize {
        self.e_eq.nrows()
    }

    pub fn hess(&self) -> &DMatrix<f64> {
        &self.hess
    }

    pub fn grad(&self) -> &DVector<f64> {
        &self.grad
    }

    pub fn g_ineq(&self) -> &DMatrix<f64> {
        &self.g_ineq
    }

    pub fn h_ineq(&self) -> &DVector<f64> {
        &self.h_ineq
    }

    pub fn e_eq(&self) -> &DMatrix<f64> {
        &self.e_eq
    }

    pub fn d_eq(&self) -> &DVector<f64> {
        &self.d_eq
    }

    /// Objective value ½ wᵀ H w + fᵀ w (with the unridged Hessian).
    pub fn objective(&self, w: &DVector<f64>) -> f64 {
        0.5 * (w.transpose() * &self.hess * w)[(0, 0)] + self.grad.dot(w)
    }
}

/// Residuals of the Karush-Kuhn-Tucker conditions at a returned solution.
///
/// Stationarity is measured against the ridged Hessian `H + QP_RIDGE·I`,
/// i.e. the problem the solver actually optimises; the remaining residuals
/// use the original problem data.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// ‖(H + ridge·I) w + f + Gᵀμ + Eᵀν‖∞.
    pub stationarity: f64,
    /// max(0, maxᵢ (G w − h)ᵢ).
    pub primal_inequality: f64,
    /// maxᵢ |(E w − d)ᵢ|.
    pub primal_equality: f64,
    /// maxᵢ |μᵢ (G w − h)ᵢ|.
    pub complementarity: f64,
}

impl KktResiduals {
    /// Largest of the four residuals.
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_inequality)
            .max(self.primal_equality)
            .max(self.complementarity)
    }
}

/// An optimal primal/dual pair.
#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Optimal decision vector.
    pub w: DVector<f64>,
    /// Multipliers for `G w ≤ h` (non-negative).
    pub ineq_duals: DVector<f64>,
    /// Multipliers for `E w = d` (sign-free).
    pub eq_duals: DVector<f64>,
    /// Active-set changes performed.
    pub iterations: usize,
    /// KKT diagnostics at the returned point.
    pub kkt: KktResiduals,
}

/// Certificate that no point satisfies `G w ≤ h, E w = d`: weights `y` with
/// `Gᵀ y_ineq + Eᵀ y_eq = 0`, `y_ineq ≥ 0` and `hᵀ y_ineq + dᵀ y_eq < 0`.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    pub ineq_weights: DVector<f64>,
    pub eq_weights: DVector<f64>,
}

impl FarkasCertificate {
    /// Returns (‖Gᵀy_ineq + Eᵀy_eq‖∞, hᵀy_ineq + dᵀy_eq) for verification.
    pub fn residual(&self, problem: &QpProblem) -> (f64, f64) {
        let mut combo = DVector::zeros(problem.dim());
        if problem.n_ineq() > 0 {
            combo += problem.g_ineq().transpose() * &self.ineq_weights;
        }
        if problem.n_eq() > 0 {
            combo += problem.e_eq().transpose() * &self.eq_weights;
        }
        let norm = combo.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let rhs = problem.h_ineq().dot(&self.ineq_weights) + problem.d_eq().dot(&self.eq_weights);
        (norm, rhs)
    }
}

/// Result of a solve attempt.
#[derive(Debug, Clone)]
pub enum QpOutcome {
    Optimal(QpSolution),
    /// The constraint system is inconsistent; carries a Farkas certificate.
    Infeasible(FarkasCertificate),
    /// The objective decreases without bound along a feasible ray (detected
    /// as an optimiser whose norm exceeds [`UNBOUNDED_NORM`]).
    Unbounded {
        norm: f64,
    },
    /// The active-set iteration cap was reached.
    IterationLimit {
        iterations: usize,
    },
}

impl QpOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, QpOutcome::Optimal(_))
    }

    pub fn optimal(&self) -> Option<&QpSolution> {
        match self {
            QpOutcome::Optimal(sol) => Some(sol),
            _ => None,
        }
    }

    /// Unwraps the optimal solution or converts the failure into an error.
    pub fn into_optimal(self) -> Result<QpSolution> {
        match self {
            QpOutcome::Optimal(sol) => Ok(sol),
            QpOutcome::Infeasible(_) => Err(CoreError::numerical("qp infeasible")),
            QpOutcome::Unbounded { norm } => Err(CoreError::numerical(format!(
                "qp unbounded (optimiser norm {norm:.3e})"
            ))),
            QpOutcome::IterationLimit { iterations } => Err(CoreError::numerical(format!(
                "qp iteration cap reached after {iterations} active-set changes"
            ))),
        }
    }
}

/// Prediction horizon shared by the receding-horizon controllers.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Horizon {
    /// Number of prediction steps (≥ 1).
    pub n: usize,
    /// Step length in seconds (> 0).
    pub dt: f64,
}

impl Horizon {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CoreError::invalid("horizon: n must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CoreError::invalid("horizon: dt must be positive"));
        }
        Ok(())
    }
}
