//! Tuning and scenario configuration for the control stack.
//!
//! All tunings live in one JSON document (`scenarios.json`) so closed-loop
//! results are reproducible from checked-in configuration alone: supervisory
//! economic-MPC weights, airpath tracking-MPC weights and bounds, and the
//! named scenario table mapping each case to a NOx-penalty level and a
//! soot-limit flag.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Schema version stamped into the scenario configuration file.
pub const CONTROL_SCHEMA_VERSION: u32 = 1;

/// Which of the two NOx penalty levels a scenario uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoxPenalty {
    Low,
    High,
}

/// A named closed-loop case: whether the supervisory layer runs at all and,
/// if so, how hard it leans on NOx and whether the soot ceiling is enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// `false` replays the look-up targets untouched (the baseline).
    pub empc_enabled: bool,
    pub nox_penalty: NoxPenalty,
    pub soot_limit: bool,
}

/// Supervisory economic-MPC weights and limits.
///
/// The stage cost trades quadratic target fidelity (`alpha`, `beta`) against
/// delivered fuel (`gamma`), predicted NOx magnitude (`eta`) and a softened
/// soot ceiling (`zeta`), plus a quadratic move penalty `r` on the physical
/// target increments (kPa, EGR fraction, mm³/stroke).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpcConfig {
    /// Boost-pressure target deviation weight [1/kPa²].
    pub alpha: f64,
    /// EGR-fraction target deviation weight [1/fraction²].
    pub beta: f64,
    /// Fuel shortfall weight [1/mm³]; pulls delivered fuel up to the demand.
    pub gamma: f64,
    /// NOx magnitude weight at the low-penalty setting [1/ppm].
    pub eta_low: f64,
    /// NOx magnitude weight at the high-penalty setting [1/ppm].
    pub eta_high: f64,
    /// Soot-ceiling slack weight [1/% opacity].
    pub zeta: f64,
    /// Move penalty on (Δp_im, Δχ_egr, Δw_inj), row-major 3×3, PSD.
    pub r: [[f64; 3]; 3],
    /// Soot ceiling for limit-enabled scenarios [% opacity].
    pub soot_max_pct: f64,
    /// Prediction horizon [base steps].
    pub horizon: usize,
    /// Supervisory period: the QP is re-solved every this many base steps.
    pub period_steps: usize,
    /// Admissible adjusted boost-pressure target range [kPa].
    pub p_im_min_kpa: f64,
    pub p_im_max_kpa: f64,
}

impl EmpcConfig {
    /// The NOx weight selected by a scenario.
    pub fn eta(&self, penalty: NoxPenalty) -> f64 {
        match penalty {
            NoxPenalty::Low => self.eta_low,
            NoxPenalty::High => self.eta_high,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta_low", self.eta_low),
            ("eta_high", self.eta_high),
            ("zeta", self.zeta),
            ("soot_max_pct", self.soot_max_pct),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::invalid(format!(
                    "empc config: {name} must be positive, got {v}"
                )));
            }
        }
        if self.eta_low >= self.eta_high {
            return Err(CoreError::invalid(
                "empc config: eta_low must be below eta_high",
            ));
        }
        if self.horizon == 0 || self.period_steps == 0 {
            return Err(CoreError::invalid(
                "empc config: horizon and period_steps must be at least 1",
            ));
        }
        if !(self.p_im_min_kpa.is_finite()
            && self.p_im_max_kpa.is_finite()
            && self.p_im_min_kpa < self.p_im_max_kpa)
        {
            return Err(CoreError::invalid(
                "empc config: boost-pressure bounds must be ordered",
            ));
        }
        validate_psd3(&self.r, "empc config: r")
    }
}

/// Airpath tracking-MPC weights and bounds, shared by the feedforward and
/// feedback layers (states are `(p_im [kPa], χ_egr [-])`, inputs are
/// `(EGR %, VGT %)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirpathMpcConfig {
    /// Prediction horizon [base steps].
    pub horizon: usize,
    /// Diagonal tracking-error weight on (p_im, χ_egr).
    pub q_track: [f64; 2],
    /// Diagonal move weight on (ΔEGR, ΔVGT).
    pub s_move: [f64; 2],
    /// Diagonal terminal tracking-error weight on (p_im, χ_egr).
    pub p_terminal: [f64; 2],
    /// Soft state bounds (feedback layer only).
    pub z_min: [f64; 2],
    pub z_max: [f64; 2],
    /// Hard actuator bounds [%].
    pub v_min: [f64; 2],
    pub v_max: [f64; 2],
    /// Quadratic weight on the state-bound slack.
    pub slack_quad: f64,
}

impl AirpathMpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(CoreError::invalid("airpath config: horizon must be ≥ 1"));
        }
        for (name, pair, strictly) in [
            ("q_track", &self.q_track, true),
            ("s_move", &self.s_move, true),
            ("p_terminal", &self.p_terminal, false),
        ] {
            for v in pair {
                let ok = v.is_finite() && if strictly { *v > 0.0 } else { *v >= 0.0 };
                if !ok {
                    return Err(CoreError::invalid(format!(
                        "airpath config: {name} entries must be positive"
                    )));
                }
            }
        }
        for i in 0..2 {
            if !(self.z_min[i].is_finite()
                && self.z_max[i].is_finite()
                && self.z_min[i] < self.z_max[i])
            {
                return Err(CoreError::invalid(
                    "airpath config: state bounds must be ordered",
                ));
            }
            if !(self.v_min[i].is_finite()
                && self.v_max[i].is_finite()
                && self.v_min[i] < self.v_max[i])
            {
                return Err(CoreError::invalid(
                    "airpath config: actuator bounds must be ordered",
                ));
            }
        }
        if !(self.slack_quad.is_finite() && self.slack_quad > 0.0) {
            return Err(CoreError::invalid(
                "airpath config: slack_quad must be positive",
            ));
        }
        Ok(())
    }
}

/// The full control configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub schema_version: u32,
    pub empc: EmpcConfig,
    pub airpath: AirpathMpcConfig,
    pub scenarios: Vec<Scenario>,
}

impl ControlConfig {
    /// The checked-in reference tuning: a baseline plus the four supervisory
    /// cases spanning {low, high} NOx penalty × {off, on} soot limit.
    pub fn reference() -> Self {
        let eta_low = 0.01;
        let eta_high = 20.0 * eta_low;
        ControlConfig {
            schema_version: CONTROL_SCHEMA_VERSION,
            empc: EmpcConfig {
                alpha: 0.05,
                beta: 1500.0,
                gamma: 2.0,
                eta_low,
                eta_high,
                zeta: 1e3 * eta_high,
                r: [[0.5, 0.0, 0.0], [0.0, 1e5, 0.0], [0.0, 0.0, 2.0]],
                soot_max_pct: 24.0,
                horizon: 10,
                period_steps: 2,
                p_im_min_kpa: 95.0,
                p_im_max_kpa: 280.0,
            },
            airpath: AirpathMpcConfig {
                horizon: 8,
                q_track: [1.0, 4000.0],
                s_move: [0.5, 0.5],
                p_terminal: [5.0, 20000.0],
                z_min: [90.0, 0.0],
                z_max: [300.0, 0.8],
                v_min: [0.0, 0.0],
                v_max: [100.0, 100.0],
                slack_quad: 50.0,
            },
            scenarios: vec![
                Scenario {
                    name: "baseline".into(),
                    empc_enabled: false,
                    nox_penalty: NoxPenalty::Low,
                    soot_limit: false,
                },
                Scenario {
                    name: "EMPC-A".into(),
                    empc_enabled: true,
                    nox_penalty: NoxPenalty::Low,
                    soot_limit: false,
                },
                Scenario {
                    name: "EMPC-B".into(),
                    empc_enabled: true,
                    nox_penalty: NoxPenalty::High,
                    soot_limit: false,
                },
                Scenario {
                    name: "EMPC-C".into(),
                    empc_enabled: true,
                    nox_penalty: NoxPenalty::Low,
                    soot_limit: true,
                },
                Scenario {
                    name: "EMPC-D".into(),
                    empc_enabled: true,
                    nox_penalty: NoxPenalty::High,
                    soot_limit: true,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONTROL_SCHEMA_VERSION {
            return Err(CoreError::artifact(format!(
                "control config: schema version {} unsupported (expected {CONTROL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.empc.validate()?;
        self.airpath.validate()?;
        if self.scenarios.is_empty() {
            return Err(CoreError::invalid("control config: no scenarios defined"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            if s.name.trim().is_empty() {
                return Err(CoreError::invalid("control config: empty scenario name"));
            }
            if self.scenarios[..i].iter().any(|o| o.name == s.name) {
                return Err(CoreError::invalid(format!(
                    "control config: duplicate scenario name {:?}",
                    s.name
                )));
            }
            if s.name == "baseline" && s.empc_enabled {
                return Err(CoreError::invalid(
                    "control config: the baseline scenario cannot enable the supervisory layer",
                ));
            }
        }
        Ok(())
    }

    /// Finds a scenario by name.
    pub fn scenario(&self, name: &str) -> Result<&Scenario> {
        self.scenarios
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| {
                let known: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
                CoreError::invalid(format!(
                    "unknown scenario {name:?}; configured: {known:?}"
                ))
            })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::artifact(format!("reading control config {}: {e}", path.display()))
        })?;
        let cfg: ControlConfig = serde_json::from_str(&text).map_err(|e| {
            CoreError::artifact(format!("parsing control config {}: {e}", path.display()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| {
            CoreError::artifact(format!("writing control config {}: {e}", path.display()))
        })?;
        Ok(())
    }
}

/// Symmetric positive-semidefiniteness check for a 3×3 weight matrix, using
/// the same shifted-Cholesky criterion as the QP validation.
fn validate_psd3(m: &[[f64; 3]; 3], what: &str) -> Result<()> {
    let mut scale = 0.0f64;
    for row in m {
        for v in row {
            if !v.is_finite() {
                return Err(CoreError::invalid(format!("{what}: non-finite entry")));
            }
            scale = scale.max(v.abs());
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if (m[i][j] - m[j][i]).abs() > 1e-10 * (1.0 + scale) {
                return Err(CoreError::invalid(format!("{what}: not symmetric")));
            }
        }
    }
    let mut shifted = nalgebra::DMatrix::zeros(3, 3);
    for i in 0..3 {
        for j in 0..3 {
            shifted[(i, j)] = m[i][j];
        }
        shifted[(i, i)] += 1e-10 * (1.0 + scale);
    }
    if nalgebra::Cholesky::new(shifted).is_none() {
        return Err(CoreError::invalid(format!(
            "{what}: not positive semidefinite"
        )));
    }
    Ok(())
}
