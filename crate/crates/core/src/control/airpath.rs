//! Airpath tracking MPC: a feedforward layer on the nominal model and a
//! rate-based feedback layer that removes the residual offset.
//!
//! Both layers share one formulation: a velocity-form QP over actuator
//! moves with quadratic tracking error on `(p_im, χ_egr)`, a terminal
//! tracking weight, softened state bounds and hard actuator limits. The
//! feedforward layer closes its loop around the scheduled nominal model
//! only — the plant never feeds back into it — so it supplies the fast
//! response; the feedback layer runs the same QP on the measured airpath
//! state and outputs an accumulated correction, whose built-in integral
//! action drives the steady tracking error to zero even when the plant
//! gains differ from the model. Solver failures degrade gracefully: the
//! feedforward holds its previous command, the feedback freezes its
//! correction, and both count the event.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::lpv::{LocalModel, LpvGridModel};
use crate::plant::{ActuatorInput, OperatingPoint};
use crate::qp::{
    condense, make_rate_model, solve_qp, CondenseSpec, HardRow, Horizon, QuadTerm, RateModel,
    SoftRow,
};

use super::config::AirpathMpcConfig;
use super::types::AdjustedTargets;

/// Builds the shared tracking QP around a local airpath model.
///
/// `z0` is the extended state `(Δz, z_prev, u_prev)` in physical units and
/// `v_box` the hard bounds on the QP's own input channel (absolute command
/// for the feedforward, correction range for the feedback).
fn tracking_spec(
    cfg: &AirpathMpcConfig,
    dt: f64,
    rate: RateModel,
    z0: DVector<f64>,
    r_track: [f64; 2],
    v_box: [[f64; 2]; 2],
) -> CondenseSpec {
    let dim = rate.dim();
    let rows_abs: Vec<DVector<f64>> = (0..2).map(|i| rate.row_abs_state(i)).collect();
    let rows_in: Vec<DVector<f64>> = (0..2).map(|i| rate.row_input(i)).collect();

    let mut quad = Vec::with_capacity(2);
    let mut terminal_quad = Vec::with_capacity(2);
    for i in 0..2 {
        quad.push(QuadTerm {
            row: rows_abs[i].clone(),
            offset: -r_track[i],
            weight: cfg.q_track[i],
        });
        terminal_quad.push(QuadTerm {
            row: rows_abs[i].clone(),
            offset: -r_track[i],
            weight: cfg.p_terminal[i],
        });
    }
    let mut soft = Vec::with_capacity(4);
    for i in 0..2 {
        soft.push(SoftRow {
            row: rows_abs[i].clone(),
            ub: cfg.z_max[i],
            linear_weight: 0.0,
            quad_weight: cfg.slack_quad,
        });
        soft.push(SoftRow {
            row: -&rows_abs[i],
            ub: -cfg.z_min[i],
            linear_weight: 0.0,
            quad_weight: cfg.slack_quad,
        });
    }
    let mut hard = Vec::with_capacity(4);
    for i in 0..2 {
        hard.push(HardRow {
            row: rows_in[i].clone(),
            ub: v_box[1][i],
        });
        hard.push(HardRow {
            row: -&rows_in[i],
            ub: -v_box[0][i],
        });
    }
    CondenseSpec {
        rate,
        horizon: Horizon { n: cfg.horizon, dt },
        z0,
        r_du: DMatrix::from_diagonal(&DVector::from_row_slice(&cfg.s_move)),
        lin_z: DVector::zeros(dim),
        quad,
        terminal_quad,
        one_norm: Vec::new(),
        soft,
        hard,
        du_min: DVector::from_element(2, f64::NEG_INFINITY),
        du_max: DVector::from_element(2, f64::INFINITY),
    }
}

/// Clamps the scheduling fuel onto the grid's fuel axis, which is the fuel
/// level the local equilibria were recorded at.
fn steady_fuel(model: &LpvGridModel, rho: OperatingPoint) -> f64 {
    let fuels = &model.grid.fuels_mm3;
    rho.fuel_mm3.clamp(fuels[0], *fuels.last().unwrap())
}

/// Feedforward tracking MPC on the nominal airpath model.
pub struct FfController {
    cfg: AirpathMpcConfig,
    dt: f64,
    state: Option<FfState>,
    /// Solves that failed; the previous command was held each time.
    pub qp_failures: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfState {
    /// Nominal airpath state (p_im [kPa], χ_egr [-]).
    z: [f64; 2],
    /// Nominal state one base step earlier.
    z_prev: [f64; 2],
    /// Previous feedforward command (EGR %, VGT %).
    v_prev: [f64; 2],
}

impl FfController {
    pub fn new(cfg: AirpathMpcConfig, dt: f64) -> Self {
        FfController {
            cfg,
            dt,
            state: None,
            qp_failures: 0,
        }
    }

    /// Current nominal state, once initialized.
    pub fn nominal_state(&self) -> Option<[f64; 2]> {
        self.state.map(|s| s.z)
    }

    /// One base step: solve for the feedforward command, then advance the
    /// nominal model under it. The first call starts the nominal model at
    /// the local equilibrium.
    pub fn step(
        &mut self,
        target: &AdjustedTargets,
        rho: OperatingPoint,
        model: &LpvGridModel,
    ) -> (ActuatorInput, bool) {
        let local = model.interpolate(rho);
        let st = *self.state.get_or_insert_with(|| FfState {
            z: [local.x_ss[0], local.x_ss[1]],
            z_prev: [local.x_ss[0], local.x_ss[1]],
            v_prev: [local.u_ss[0], local.u_ss[1]],
        });

        let (v_cmd, ok) = match self.solve(&st, target, &local) {
            Ok(v) => (v, true),
            Err(_) => {
                self.qp_failures += 1;
                (st.v_prev, false)
            }
        };

        // Advance the nominal model one base step under the chosen command
        // and the commanded fuel (the model's fuel column acts on the
        // deviation from the grid's steady fuel).
        let xn = DVector::from_row_slice(&[st.z[0] - local.x_ss[0], st.z[1] - local.x_ss[1]]);
        let un = DVector::from_row_slice(&[v_cmd[0] - local.u_ss[0], v_cmd[1] - local.u_ss[1]]);
        let wf = target.w_inj_mm3 - steady_fuel(model, rho);
        let dev_next = local.step_normalized(&xn, &un, wf);
        let z_next = [
            local.x_ss[0] + dev_next[0],
            local.x_ss[1] + dev_next[1],
        ];
        self.state = Some(FfState {
            z: z_next,
            z_prev: st.z,
            v_prev: v_cmd,
        });

        (ActuatorInput::new(v_cmd[0], v_cmd[1]), ok)
    }

    fn solve(
        &self,
        st: &FfState,
        target: &AdjustedTargets,
        local: &LocalModel,
    ) -> Result<[f64; 2]> {
        let rate = make_rate_model(&local.a, &local.b)?;
        let dz = DVector::from_row_slice(&[st.z[0] - st.z_prev[0], st.z[1] - st.z_prev[1]]);
        let zp = DVector::from_row_slice(&st.z_prev);
        let vp = DVector::from_row_slice(&st.v_prev);
        let z0 = rate.initial_state(&dz, &zp, &vp)?;
        let spec = tracking_spec(
            &self.cfg,
            self.dt,
            rate,
            z0,
            [target.p_im_kpa, target.chi_egr],
            [self.cfg.v_min, self.cfg.v_max],
        );
        let condensed = condense(&spec)?;
        let sol = solve_qp(&condensed.qp)?.into_optimal()?;
        let dv = condensed.first_du(&sol.w);
        Ok([
            (st.v_prev[0] + dv[0]).clamp(self.cfg.v_min[0], self.cfg.v_max[0]),
            (st.v_prev[1] + dv[1]).clamp(self.cfg.v_min[1], self.cfg.v_max[1]),
        ])
    }
}

/// Feedback tracking MPC on the measured airpath state, producing an
/// accumulated actuator correction added on top of the feedforward.
pub struct FbController {
    cfg: AirpathMpcConfig,
    dt: f64,
    /// Measured airpath state one base step earlier.
    meas_prev: Option<[f64; 2]>,
    /// Accumulated correction (EGR %, VGT %).
    corr: [f64; 2],
    /// Solves that failed; the correction was frozen each time.
    pub qp_failures: usize,
}

impl FbController {
    pub fn new(cfg: AirpathMpcConfig, dt: f64) -> Self {
        FbController {
            cfg,
            dt,
            meas_prev: None,
            corr: [0.0, 0.0],
            qp_failures: 0,
        }
    }

    /// Current accumulated correction.
    pub fn correction(&self) -> [f64; 2] {
        self.corr
    }

    /// One base step: update the correction from the measured airpath state.
    /// `v_ff` is the feedforward command this step; the total command is
    /// constrained to the actuator box, so the correction range shrinks as
    /// the feedforward approaches a limit.
    pub fn step(
        &mut self,
        z_meas: [f64; 2],
        target: &AdjustedTargets,
        rho: OperatingPoint,
        v_ff: [f64; 2],
        model: &LpvGridModel,
    ) -> ([f64; 2], bool) {
        let local = model.interpolate(rho);
        let prev = self.meas_prev.unwrap_or(z_meas);
        let ok = match self.solve(z_meas, prev, target, v_ff, &local) {
            Ok(dc) => {
                self.corr[0] += dc[0];
                self.corr[1] += dc[1];
                true
            }
            Err(_) => {
                self.qp_failures += 1;
                false
            }
        };
        self.meas_prev = Some(z_meas);
        (self.corr, ok)
    }

    fn solve(
        &self,
        z_meas: [f64; 2],
        prev: [f64; 2],
        target: &AdjustedTargets,
        v_ff: [f64; 2],
        local: &LocalModel,
    ) -> Result<[f64; 2]> {
        let rate = make_rate_model(&local.a, &local.b)?;
        let dz = DVector::from_row_slice(&[z_meas[0] - prev[0], z_meas[1] - prev[1]]);
        let zp = DVector::from_row_slice(&prev);
        let cp = DVector::from_row_slice(&self.corr);
        let z0 = rate.initial_state(&dz, &zp, &cp)?;
        // The correction plus the (frozen) feedforward must stay inside the
        // actuator box.
        let c_box = [
            [self.cfg.v_min[0] - v_ff[0], self.cfg.v_min[1] - v_ff[1]],
            [self.cfg.v_max[0] - v_ff[0], self.cfg.v_max[1] - v_ff[1]],
        ];
        let spec = tracking_spec(
            &self.cfg,
            self.dt,
            rate,
            z0,
            [target.p_im_kpa, target.chi_egr],
            c_box,
        );
        let condensed = condense(&spec)?;
        let sol = solve_qp(&condensed.qp)?.into_optimal()?;
        let dc = condensed.first_du(&sol.w);
        Ok([dc[0], dc[1]])
    }
}
