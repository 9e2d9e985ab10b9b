//! Synthetic mean-value diesel engine with emission response.

mod config;
mod model;
mod trajectory;
mod types;

pub use config::{PlantConfig, PLANT_SCHEMA_VERSION};
pub use model::{egr_rate, Plant, CANDIDATE_NAMES, MEASUREMENT_NAMES, PRE_FUEL_CHANNEL};
pub use trajectory::{trajectory_to_csv, write_trajectory_csv, TrajectoryRow, TRAJECTORY_HEADER};
pub use types::{ActuatorInput, AirpathState, EmissionState, OperatingPoint, PlantState};

#[cfg(test)]
mod tests;
