//! Shared target types for the control stack.

use crate::lpv::{steady_targets, LpvGridModel};
use crate::plant::OperatingPoint;

/// Look-up targets at an operating point: the airpath set-points the engine
/// would hold at the nominal calibration, plus the demanded fuel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPoint {
    /// Boost-pressure target [kPa].
    pub p_im_kpa: f64,
    /// EGR-fraction target [-].
    pub chi_egr: f64,
    /// Demanded fuel [mm³/stroke].
    pub w_inj_mm3: f64,
}

/// Targets after the supervisory layer has adjusted them (identical to the
/// look-up values when that layer is disabled or has failed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustedTargets {
    pub p_im_kpa: f64,
    pub chi_egr: f64,
    /// Delivered fuel command [mm³/stroke], within [0.9, 1.0]× the demand.
    pub w_inj_mm3: f64,
}

impl AdjustedTargets {
    /// Pass-through of the look-up targets (full fuel delivery).
    pub fn from_lookup(t: &TargetPoint) -> Self {
        AdjustedTargets {
            p_im_kpa: t.p_im_kpa,
            chi_egr: t.chi_egr,
            w_inj_mm3: t.w_inj_mm3,
        }
    }
}

/// Interpolates the steady-state target maps at an operating point.
///
/// The airpath grid's equilibrium table doubles as the target calibration:
/// `(p_im, χ_egr)` come from the recorded node equilibria, and the fuel
/// target is the demand itself.
pub fn lookup_targets(airpath: &LpvGridModel, rho: OperatingPoint) -> TargetPoint {
    let (p_im_kpa, chi_egr) = steady_targets(airpath, rho);
    TargetPoint {
        p_im_kpa,
        chi_egr,
        w_inj_mm3: rho.fuel_mm3,
    }
}
