//! Shared value types for the synthetic engine plant.

use serde::{Deserialize, Serialize};

/// Scheduling point: engine speed and fuel quantity.
///
/// Used both as the exogenous drive-cycle demand and as the scheduling
/// parameter for the gain-scheduled models and controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Engine speed [rpm].
    pub speed_rpm: f64,
    /// Fuel injection quantity [mm3/stroke].
    pub fuel_mm3: f64,
}

impl OperatingPoint {
    pub fn new(speed_rpm: f64, fuel_mm3: f64) -> Self {
        OperatingPoint {
            speed_rpm,
            fuel_mm3,
        }
    }
}

/// Airpath actuator commands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuatorInput {
    /// EGR valve position [% open], 0 = shut, 100 = fully open.
    pub egr_pos: f64,
    /// VGT vane position [% closed], 0 = fully open, 100 = fully closed.
    pub vgt_pos: f64,
}

impl ActuatorInput {
    pub fn new(egr_pos: f64, vgt_pos: f64) -> Self {
        ActuatorInput { egr_pos, vgt_pos }
    }

    /// Clamp both positions to the physical 0..100 range.
    pub fn clamped(&self) -> Self {
        ActuatorInput {
            egr_pos: self.egr_pos.clamp(0.0, 100.0),
            vgt_pos: self.vgt_pos.clamp(0.0, 100.0),
        }
    }
}

/// Airpath portion of the plant state.
///
/// `w_c` and `w_egr` are algebraic flow outputs refreshed on every step;
/// they are carried in the state so downstream consumers (EGR-rate
/// computation, logging, training data) see flows consistent with the
/// pressures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirpathState {
    /// Intake manifold pressure [kPa abs].
    pub p_im: f64,
    /// Exhaust manifold pressure [kPa abs].
    pub p_ex: f64,
    /// Normalised turbocharger speed [-].
    pub n_turb: f64,
    /// Compressor (fresh air) mass flow [g/s].
    pub w_c: f64,
    /// EGR mass flow [g/s].
    pub w_egr: f64,
}

/// Engine-out emission levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionState {
    /// NOx concentration [ppm].
    pub nox: f64,
    /// Soot as exhaust opacity [%].
    pub soot: f64,
}

/// Full plant state: airpath plus first-order-lagged emission outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub air: AirpathState,
    /// Lagged NOx output [ppm].
    pub nox: f64,
    /// Lagged soot output [%].
    pub soot: f64,
}

impl PlantState {
    /// Emission outputs as reported by the (virtual) sensors.
    pub fn measured_emissions(&self) -> EmissionState {
        EmissionState {
            nox: self.nox,
            soot: self.soot,
        }
    }
}
