//! Grid-scheduled linear model identification.
//!
//! The controllers need cheap linear predictors of two subsystems: the
//! emission response (NOx, soot) to intake conditions and fuel, and the
//! airpath response (intake pressure, EGR rate) to the two actuators.
//! Both are obtained the same way: at every node of a 9 x 11 speed/fuel
//! grid the plant is settled, dithered with a seeded binary excitation,
//! and a small discrete-time linear model is fitted to the logged
//! response by one-step least squares, projected to be stable, and
//! gated on multi-step rollout accuracy. Evaluating the model anywhere
//! in the envelope bilinearly interpolates all node fields, including
//! the equilibrium and scale tables recorded alongside the matrices.

mod fit;
mod identify;
mod io;
mod perturb;
mod types;

pub use fit::{
    fit_local, MIN_ROWS_PER_PARAM, ROLLOUT_ERROR_LIMIT, ROLLOUT_HORIZON, SPECTRAL_RADIUS_LIMIT,
};
pub use identify::{
    compare_trajectories, identify_grid, nominal_actuators, simulate_emissions,
    simulate_reference, steady_targets, validate_lpv, IdentConfig, LpvModels, ValidationReport,
    NOMINAL_EGR_PCT, NOMINAL_VGT_PCT,
};
pub use io::{load_lpv, save_lpv, LPV_SCHEMA_VERSION};
pub use perturb::{run_perturbation, ExperimentLog, PerturbationSpec};
pub use types::{
    spectral_radius, LocalModel, LpvGridModel, LpvKind, ScheduleGrid, GRID_FUEL_COUNT,
    GRID_SPEED_COUNT,
};

#[cfg(test)]
mod tests;
