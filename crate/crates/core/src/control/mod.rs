//! Hierarchical engine-out emissions control.
//!
//! Three layers run on top of the scheduled linear models:
//!
//! 1. a supervisory economic MPC ([`EmpcController`]) that adjusts the
//!    look-up boost/EGR/fuel targets every few base steps to trade NOx,
//!    delivered fuel and a soot ceiling,
//! 2. a feedforward tracking MPC ([`FfController`]) closed around the
//!    nominal airpath model, and
//! 3. a feedback tracking MPC ([`FbController`]) on the measured airpath
//!    state whose accumulated correction removes steady offsets.
//!
//! [`ControllerStack`] composes them per scenario and emits one telemetry
//! row per base step; [`ControlConfig`] carries every tuning constant and
//! the scenario table in one JSON document.

mod airpath;
mod config;
mod empc;
mod stack;
mod types;

pub use airpath::{FbController, FfController};
pub use config::{
    AirpathMpcConfig, ControlConfig, EmpcConfig, NoxPenalty, Scenario, CONTROL_SCHEMA_VERSION,
};
pub use empc::{EmpcController, EmpcStepInfo};
pub use stack::{ControllerStack, StackCommand, TelemetryRow, TELEMETRY_HEADER};
pub use types::{lookup_targets, AdjustedTargets, TargetPoint};

#[cfg(test)]
mod tests;
