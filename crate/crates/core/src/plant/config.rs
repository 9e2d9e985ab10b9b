//! Plant parameter set with JSON (de)serialisation.

use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const PLANT_SCHEMA_VERSION: u32 = 1;

/// All physical constants of the synthetic engine.
///
/// The model is a mean-value approximation: two manifold filling dynamics,
/// a first-order turbocharger, algebraic valve/turbine/compressor flows and
/// static emission maps behind first-order sensor lags. Values are chosen
/// for a ~7 litre six-cylinder engine, but the absolute calibration only
/// needs to be plausible — every downstream stage (surrogate, identified
/// models, controllers) adapts to whatever this configuration produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub schema_version: u32,

    // --- timing ---
    /// Base sample period of every log and controller [s].
    pub dt: f64,
    /// Internal integrator substeps per `dt` (RK4).
    pub sub_steps: u32,

    // --- operating envelope ---
    pub speed_min_rpm: f64,
    pub speed_max_rpm: f64,
    pub fuel_max_mm3: f64,

    // --- ambient / geometry ---
    /// Ambient pressure [kPa].
    pub p_amb: f64,
    /// Intake manifold temperature [K].
    pub t_im: f64,
    /// Engine displacement [m3].
    pub v_d: f64,
    /// Volumetric efficiency [-].
    pub eta_vol: f64,
    /// Cylinder count.
    pub cylinders: f64,
    /// Fuel density [g/mm3].
    pub rho_fuel: f64,

    // --- manifold filling gains [kPa per g of stored mass] ---
    pub k_im: f64,
    pub k_ex: f64,

    // --- compressor ---
    /// Supply conductance [g/s per kPa]: flow per kPa of margin between the
    /// source pressure and the intake manifold.
    pub c_comp: f64,
    /// Source pressure shape: p_amb * (1 + boost_gain * n_turb^1.5).
    pub boost_gain: f64,

    // --- EGR valve ---
    /// Valve gain [g/s per kPa of pressure drop] at full opening.
    pub c_egr: f64,
    /// Smoothing width for pressure differences [kPa].
    pub sp_width: f64,

    // --- turbine / turbocharger ---
    /// Turbine gain [g/s per kPa above ambient] at fully open vanes.
    pub c_turb: f64,
    /// Fractional area reduction at fully closed vanes.
    pub area_min_frac: f64,
    /// Turbo spool gain: target speed per kPa of exhaust back-pressure.
    pub k_spool: f64,
    /// Extra spool authority of closed vanes (vanes direct flow onto the
    /// wheel): multiplier 1 + vgt_spool_gain * vgt/100.
    pub vgt_spool_gain: f64,
    /// Saturation level of normalised turbo speed.
    pub n_turb_max: f64,
    /// Windmilling floor of normalised turbo speed; keeps the compressor
    /// alive at zero turbine power so the airpath has a unique equilibrium.
    pub n_turb_base: f64,
    /// Turbocharger time constant [s].
    pub tau_turbo: f64,

    // --- emission maps ---
    pub nox_floor: f64,
    pub nox_gain: f64,
    pub nox_fuel_exp: f64,
    /// NOx sensitivity to EGR rate (exponential decay coefficient).
    pub nox_egr_sens: f64,
    pub nox_speed_base: f64,
    pub nox_boost_sens: f64,
    pub soot_floor: f64,
    pub soot_gain: f64,
    pub soot_fuel_exp: f64,
    /// Soot sensitivity to EGR rate (exponential growth coefficient).
    pub soot_egr_sens: f64,
    /// Air/fuel ratio at which soot formation is half saturated.
    pub afr_ref: f64,
    /// Emission sensor lags [s].
    pub tau_nox: f64,
    pub tau_soot: f64,

    // --- auxiliary measurement maps ---
    pub rail_base_mpa: f64,
    pub rail_per_fuel: f64,
    pub rail_per_rpm: f64,
    pub timing_base_deg: f64,
    pub timing_speed_span: f64,
    pub timing_per_fuel: f64,
    pub pre_fuel_mm3: f64,
    pub torque_per_fuel: f64,
    pub torque_boost_base: f64,
    pub torque_boost_sens: f64,
    pub friction_base_nm: f64,
    pub friction_per_rpm: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig::reference()
    }
}

impl PlantConfig {
    /// The reference engine used throughout tests and shipped configs.
    pub fn reference() -> Self {
        PlantConfig {
            schema_version: PLANT_SCHEMA_VERSION,
            dt: 0.1,
            sub_steps: 5,
            speed_min_rpm: 800.0,
            speed_max_rpm: 3200.0,
            fuel_max_mm3: 120.0,
            p_amb: 101.325,
            t_im: 320.0,
            v_d: 0.0073,
            eta_vol: 0.90,
            cylinders: 6.0,
            rho_fuel: 8.35e-4,
            k_im: 3.0,
            k_ex: 5.5,
            c_comp: 6.0,
            boost_gain: 0.6,
            c_egr: 4.0,
            sp_width: 0.5,
            c_turb: 4.8,
            area_min_frac: 0.72,
            k_spool: 0.014,
            vgt_spool_gain: 0.2,
            n_turb_max: 2.2,
            n_turb_base: 0.15,
            tau_turbo: 1.2,
            nox_floor: 18.0,
            nox_gain: 1350.0,
            nox_fuel_exp: 1.15,
            nox_egr_sens: 3.2,
            nox_speed_base: 0.75,
            nox_boost_sens: 0.15,
            soot_floor: 0.05,
            soot_gain: 9.0,
            soot_fuel_exp: 1.6,
            soot_egr_sens: 2.4,
            afr_ref: 16.0,
            tau_nox: 0.5,
            tau_soot: 0.3,
            rail_base_mpa: 40.0,
            rail_per_fuel: 0.9,
            rail_per_rpm: 0.03,
            timing_base_deg: 1.0,
            timing_speed_span: 9.0,
            timing_per_fuel: 0.015,
            pre_fuel_mm3: 1.5,
            torque_per_fuel: 14.0,
            torque_boost_base: 0.92,
            torque_boost_sens: 0.08,
            friction_base_nm: 30.0,
            friction_per_rpm: 0.015,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != PLANT_SCHEMA_VERSION {
            return Err(CoreError::invalid(format!(
                "plant schema_version {} unsupported (expected {})",
                self.schema_version, PLANT_SCHEMA_VERSION
            )));
        }
        if !(self.dt > 0.0) {
            return Err(CoreError::invalid("dt must be positive"));
        }
        if self.sub_steps == 0 {
            return Err(CoreError::invalid("sub_steps must be >= 1"));
        }
        if !(self.speed_min_rpm < self.speed_max_rpm) {
            return Err(CoreError::invalid("speed envelope must be ordered"));
        }
        if !(self.fuel_max_mm3 > 0.0) {
            return Err(CoreError::invalid("fuel_max_mm3 must be positive"));
        }
        for (name, v) in [
            ("p_amb", self.p_amb),
            ("k_im", self.k_im),
            ("k_ex", self.k_ex),
            ("c_comp", self.c_comp),
            ("c_egr", self.c_egr),
            ("c_turb", self.c_turb),
            ("tau_turbo", self.tau_turbo),
            ("tau_nox", self.tau_nox),
            ("tau_soot", self.tau_soot),
            ("sp_width", self.sp_width),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::invalid(format!(
                    "{name} must be positive and finite"
                )));
            }
        }
        if !(0.0 < self.area_min_frac && self.area_min_frac < 1.0) {
            return Err(CoreError::invalid("area_min_frac must lie in (0,1)"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::artifact(format!("cannot read plant config {}: {e}", path.display()))
        })?;
        let cfg: PlantConfig = serde_json::from_str(&text).map_err(|e| {
            CoreError::artifact(format!("bad plant config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_is_valid() {
        PlantConfig::reference().validate().unwrap();
    }

    #[test]
    fn rejects_wrong_schema_version() {
        let mut cfg = PlantConfig::reference();
        cfg.schema_version = 99;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_nonpositive_dt() {
        let mut cfg = PlantConfig::reference();
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plant.json");
        let cfg = PlantConfig::reference();
        cfg.save(&path).unwrap();
        let back = PlantConfig::load(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
    }
}
