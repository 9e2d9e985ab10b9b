//! Dense convex QP solver and rate-based prediction-model builders shared by
//! the receding-horizon controllers.

mod condense;
mod rate;
mod solver;
mod types;

pub use condense::{
    condense, CondenseSpec, Condensed, CondensedLayout, HardRow, OneNormTerm, QuadTerm, SoftRow,
};
pub use rate::{make_rate_model, PredictionMatrices, RateModel};
pub use solver::solve_qp;
pub use types::{
    FarkasCertificate, Horizon, KktResiduals, QpOutcome, QpProblem, QpSolution, KKT_TOLERANCE,
    QP_MAX_ITERATIONS, QP_RIDGE, UNBOUNDED_NORM,
};
