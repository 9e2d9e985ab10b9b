//! The full control stack for one closed-loop run: look-up targets, the
//! optional supervisory layer, and the two airpath tracking layers, composed
//! into one actuator command plus a fixed-schema telemetry row per base step.

use crate::lpv::LpvModels;
use crate::plant::{ActuatorInput, EmissionState, OperatingPoint};

use super::airpath::{FbController, FfController};
use super::config::{ControlConfig, Scenario};
use super::empc::{EmpcController, EmpcStepInfo};
use super::types::{lookup_targets, AdjustedTargets};

/// Column order of the telemetry CSV produced by [`TelemetryRow::to_csv`].
pub const TELEMETRY_HEADER: &str = "time_s,speed_rpm,fuel_demand_mm3,\
p_im_trg_kpa,chi_egr_trg,p_im_adj_kpa,chi_egr_adj,w_inj_adj_mm3,\
egr_ff_pct,vgt_ff_pct,egr_corr_pct,vgt_corr_pct,egr_cmd_pct,vgt_cmd_pct,\
p_im_meas_kpa,chi_egr_meas,nox_ppm,soot_pct,\
empc_solved,empc_qp_ok,soot_slack_pct,ff_qp_ok,fb_qp_ok";

/// One base step of closed-loop telemetry.
#[derive(Debug, Clone, Copy)]
pub struct TelemetryRow {
    pub time_s: f64,
    pub speed_rpm: f64,
    pub fuel_demand_mm3: f64,
    /// Look-up targets before any supervisory adjustment.
    pub p_im_trg_kpa: f64,
    pub chi_egr_trg: f64,
    /// Targets actually handed to the tracking layers.
    pub p_im_adj_kpa: f64,
    pub chi_egr_adj: f64,
    pub w_inj_adj_mm3: f64,
    pub egr_ff_pct: f64,
    pub vgt_ff_pct: f64,
    pub egr_corr_pct: f64,
    pub vgt_corr_pct: f64,
    pub egr_cmd_pct: f64,
    pub vgt_cmd_pct: f64,
    pub p_im_meas_kpa: f64,
    pub chi_egr_meas: f64,
    pub nox_ppm: f64,
    pub soot_pct: f64,
    pub empc_solved: bool,
    pub empc_qp_ok: bool,
    pub soot_slack_pct: f64,
    pub ff_qp_ok: bool,
    pub fb_qp_ok: bool,
}

impl TelemetryRow {
    /// Renders the row in [`TELEMETRY_HEADER`] order. Floats use the
    /// shortest round-trip form, so equal runs produce identical bytes.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.time_s,
            self.speed_rpm,
            self.fuel_demand_mm3,
            self.p_im_trg_kpa,
            self.chi_egr_trg,
            self.p_im_adj_kpa,
            self.chi_egr_adj,
            self.w_inj_adj_mm3,
            self.egr_ff_pct,
            self.vgt_ff_pct,
            self.egr_corr_pct,
            self.vgt_corr_pct,
            self.egr_cmd_pct,
            self.vgt_cmd_pct,
            self.p_im_meas_kpa,
            self.chi_egr_meas,
            self.nox_ppm,
            self.soot_pct,
            self.empc_solved as u8,
            self.empc_qp_ok as u8,
            self.soot_slack_pct,
            self.ff_qp_ok as u8,
            self.fb_qp_ok as u8,
        )
    }
}

/// What the stack commands for one base step.
#[derive(Debug, Clone, Copy)]
pub struct StackCommand {
    pub actuators: ActuatorInput,
    /// Delivered fuel [mm³/stroke].
    pub fuel_mm3: f64,
    pub telemetry: TelemetryRow,
}

/// The composed controller for one scenario.
pub struct ControllerStack {
    scenario: Scenario,
    v_min: [f64; 2],
    v_max: [f64; 2],
    empc: Option<EmpcController>,
    ff: FfController,
    fb: FbController,
    models: LpvModels,
    dt: f64,
    step_idx: usize,
}

impl ControllerStack {
    /// Builds the stack for a scenario; the supervisory layer is only
    /// instantiated when the scenario enables it, so a disabled run never
    /// touches that code path.
    pub fn new(cfg: &ControlConfig, scenario: &Scenario, models: LpvModels, dt: f64) -> Self {
        let empc = scenario.empc_enabled.then(|| {
            EmpcController::new(
                cfg.empc.clone(),
                scenario.nox_penalty,
                scenario.soot_limit,
                dt,
            )
        });
        ControllerStack {
            scenario: scenario.clone(),
            v_min: cfg.airpath.v_min,
            v_max: cfg.airpath.v_max,
            empc,
            ff: FfController::new(cfg.airpath.clone(), dt),
            fb: FbController::new(cfg.airpath.clone(), dt),
            models,
            dt,
            step_idx: 0,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// Total supervisory-layer QP failures so far.
    pub fn empc_qp_failures(&self) -> usize {
        self.empc.as_ref().map_or(0, |e| e.qp_failures)
    }

    /// Total airpath-layer QP failures so far (feedforward + feedback).
    pub fn airpath_qp_failures(&self) -> usize {
        self.ff.qp_failures + self.fb.qp_failures
    }

    /// One base step. `z_meas` is the measured airpath pair
    /// `(p_im [kPa], χ_egr [-])` and `emissions` the lagged sensor readings;
    /// `rho` is the scheduling point (speed, demanded fuel).
    pub fn step(
        &mut self,
        z_meas: [f64; 2],
        emissions: EmissionState,
        rho: OperatingPoint,
    ) -> StackCommand {
        let time_s = self.step_idx as f64 * self.dt;
        self.step_idx += 1;

        let targets = lookup_targets(&self.models.airpath, rho);
        let (adjusted, empc_info) = match self.empc.as_mut() {
            Some(empc) => empc.step(emissions, rho, &targets, &self.models.emissions),
            None => (
                AdjustedTargets::from_lookup(&targets),
                EmpcStepInfo {
                    solved: false,
                    qp_ok: true,
                    soot_slack: 0.0,
                    predicted_nox: 0.0,
                },
            ),
        };

        let (v_ff, ff_ok) = self.ff.step(&adjusted, rho, &self.models.airpath);
        let ff_arr = [v_ff.egr_pos, v_ff.vgt_pos];
        let (corr, fb_ok) = self
            .fb
            .step(z_meas, &adjusted, rho, ff_arr, &self.models.airpath);

        let actuators = ActuatorInput::new(
            (ff_arr[0] + corr[0]).clamp(self.v_min[0], self.v_max[0]),
            (ff_arr[1] + corr[1]).clamp(self.v_min[1], self.v_max[1]),
        );

        let telemetry = TelemetryRow {
            time_s,
            speed_rpm: rho.speed_rpm,
            fuel_demand_mm3: rho.fuel_mm3,
            p_im_trg_kpa: targets.p_im_kpa,
            chi_egr_trg: targets.chi_egr,
            p_im_adj_kpa: adjusted.p_im_kpa,
            chi_egr_adj: adjusted.chi_egr,
            w_inj_adj_mm3: adjusted.w_inj_mm3,
            egr_ff_pct: ff_arr[0],
            vgt_ff_pct: ff_arr[1],
            egr_corr_pct: corr[0],
            vgt_corr_pct: corr[1],
            egr_cmd_pct: actuators.egr_pos,
            vgt_cmd_pct: actuators.vgt_pos,
            p_im_meas_kpa: z_meas[0],
            chi_egr_meas: z_meas[1],
            nox_ppm: emissions.nox,
            soot_pct: emissions.soot,
            empc_solved: empc_info.solved,
            empc_qp_ok: empc_info.qp_ok,
            soot_slack_pct: empc_info.soot_slack,
            ff_qp_ok: ff_ok,
            fb_qp_ok: fb_ok,
        };

        StackCommand {
            actuators,
            fuel_mm3: adjusted.w_inj_mm3,
            telemetry,
        }
    }
}
