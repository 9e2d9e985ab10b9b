//! Supervisory economic MPC over the emission set-points.
//!
//! Every supervisory period this layer interpolates the scheduled emissions
//! model at the current operating point, rewrites it in velocity form and
//! solves a dense QP for an adjusted target sequence. The stage cost trades
//! quadratic fidelity to the look-up boost and EGR-fraction targets against
//! delivered fuel, the predicted NOx magnitude and a softened soot ceiling,
//! under hard limits on the fuel band (90–100 % of demand), the EGR fraction
//! and the boost-pressure target, plus a quadratic move penalty. Between
//! solves the first planned move is held: absolute boost/EGR targets and the
//! delivered-to-demanded fuel ratio are replayed against the current demand.
//! A failed solve falls back to the untouched look-up targets for that
//! period and is counted, so callers can surface a warning.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::lpv::LpvGridModel;
use crate::plant::{EmissionState, OperatingPoint};
use crate::qp::{
    condense, make_rate_model, solve_qp, CondenseSpec, HardRow, Horizon, OneNormTerm, QuadTerm,
    SoftRow,
};

use super::config::{EmpcConfig, NoxPenalty};
use super::types::{AdjustedTargets, TargetPoint};

/// Telemetry from one supervisory call.
#[derive(Debug, Clone, Copy)]
pub struct EmpcStepInfo {
    /// Whether a QP was solved on this base step.
    pub solved: bool,
    /// Whether the most recent solve reached an optimum.
    pub qp_ok: bool,
    /// First-stage soot slack from the most recent solve [% opacity].
    pub soot_slack: f64,
    /// Predicted first-stage NOx from the most recent solve [ppm].
    pub predicted_nox: f64,
}

impl EmpcStepInfo {
    fn initial() -> Self {
        EmpcStepInfo {
            solved: false,
            qp_ok: true,
            soot_slack: 0.0,
            predicted_nox: 0.0,
        }
    }
}

/// First planned move, replayed between solves.
#[derive(Debug, Clone, Copy)]
struct HeldMove {
    p_im_kpa: f64,
    chi_egr: f64,
    /// Delivered/demanded fuel ratio in [0.9, 1.0].
    fuel_ratio: f64,
}

/// The supervisory layer. One instance per closed-loop run; call
/// [`EmpcController::step`] once per base step.
pub struct EmpcController {
    cfg: EmpcConfig,
    /// NOx magnitude weight selected by the scenario [1/ppm].
    eta: f64,
    /// Whether the soot ceiling is enforced.
    soot_limit: bool,
    dt: f64,
    step_count: usize,
    /// Emission measurement at the previous base step [ppm, %].
    prev_emissions: Option<[f64; 2]>,
    /// Adjusted targets applied during the previous base step.
    prev_targets: Option<[f64; 3]>,
    held: Option<HeldMove>,
    last_info: EmpcStepInfo,
    /// Solves that failed and fell back to the look-up targets.
    pub qp_failures: usize,
}

impl EmpcController {
    pub fn new(cfg: EmpcConfig, penalty: NoxPenalty, soot_limit: bool, dt: f64) -> Self {
        let eta = cfg.eta(penalty);
        EmpcController {
            cfg,
            eta,
            soot_limit,
            dt,
            step_count: 0,
            prev_emissions: None,
            prev_targets: None,
            held: None,
            last_info: EmpcStepInfo::initial(),
            qp_failures: 0,
        }
    }

    /// Adjusts the look-up targets given the current emission measurement.
    ///
    /// Must be called once per base step; the QP runs on the first call and
    /// every `period_steps` thereafter, other calls replay the held move.
    pub fn step(
        &mut self,
        emissions: EmissionState,
        rho: OperatingPoint,
        targets: &TargetPoint,
        model: &LpvGridModel,
    ) -> (AdjustedTargets, EmpcStepInfo) {
        let x_now = [emissions.nox, emissions.soot];
        let solve_now = self.step_count % self.cfg.period_steps == 0;
        self.step_count += 1;

        let adjusted = if solve_now {
            match self.solve(x_now, rho, targets, model) {
                Ok((adj, slack, nox1)) => {
                    self.last_info = EmpcStepInfo {
                        solved: true,
                        qp_ok: true,
                        soot_slack: slack,
                        predicted_nox: nox1,
                    };
                    adj
                }
                Err(_) => {
                    self.qp_failures += 1;
                    self.last_info = EmpcStepInfo {
                        solved: true,
                        qp_ok: false,
                        soot_slack: 0.0,
                        predicted_nox: emissions.nox,
                    };
                    self.held = Some(HeldMove {
                        p_im_kpa: targets.p_im_kpa,
                        chi_egr: targets.chi_egr,
                        fuel_ratio: 1.0,
                    });
                    AdjustedTargets::from_lookup(targets)
                }
            }
        } else {
            self.replay_held(targets)
        };

        self.prev_emissions = Some(x_now);
        self.prev_targets = Some([adjusted.p_im_kpa, adjusted.chi_egr, adjusted.w_inj_mm3]);
        let info = EmpcStepInfo {
            solved: solve_now,
            ..self.last_info
        };
        (adjusted, info)
    }

    /// Replays the held move against the current fuel demand.
    fn replay_held(&self, targets: &TargetPoint) -> AdjustedTargets {
        let held = self.held.unwrap_or(HeldMove {
            p_im_kpa: targets.p_im_kpa,
            chi_egr: targets.chi_egr,
            fuel_ratio: 1.0,
        });
        let w_trg = targets.w_inj_mm3;
        AdjustedTargets {
            p_im_kpa: held.p_im_kpa,
            chi_egr: held.chi_egr,
            w_inj_mm3: (held.fuel_ratio * w_trg).clamp(0.9 * w_trg, w_trg),
        }
    }

    /// Builds and solves the supervisory QP; returns the clamped first move
    /// plus the first-stage soot slack and predicted NOx.
    fn solve(
        &mut self,
        x_now: [f64; 2],
        rho: OperatingPoint,
        targets: &TargetPoint,
        model: &LpvGridModel,
    ) -> Result<(AdjustedTargets, f64, f64)> {
        let cfg = &self.cfg;
        let w_trg = targets.w_inj_mm3;
        let local = model.interpolate(rho);
        let sx = &local.sigma_x;
        let su = &local.sigma_u;
        let n_u = local.n_inputs();
        debug_assert_eq!(local.n_states(), 2);
        debug_assert_eq!(n_u, 3);

        // Normalized extended state: the model works in per-node scaled
        // deviations, so measurements and the previously applied targets are
        // renormalized here at the current scheduling point.
        let x_prev = self.prev_emissions.unwrap_or(x_now);
        let u_prev =
            self.prev_targets
                .unwrap_or([targets.p_im_kpa, targets.chi_egr, targets.w_inj_mm3]);
        let dx = DVector::from_fn(2, |i, _| (x_now[i] - x_prev[i]) / sx[i]);
        let xp = DVector::from_fn(2, |i, _| (x_prev[i] - local.x_ss[i]) / sx[i]);
        let up = DVector::from_fn(n_u, |i, _| (u_prev[i] - local.u_ss[i]) / su[i]);

        let rate = make_rate_model(&local.a, &local.b)?;
        let z0 = rate.initial_state(&dx, &xp, &up)?;

        // Physical-unit cost rows: scaling a normalized input/state row by its
        // σ makes `rowᵀz + offset` read in kPa / fractions / mm³ / ppm / %.
        let row_p = rate.row_input(0) * su[0];
        let row_chi = rate.row_input(1) * su[1];
        let row_w = rate.row_input(2) * su[2];
        let row_nox = rate.row_abs_state(0) * sx[0];
        let row_soot = rate.row_abs_state(1) * sx[1];

        let quad = vec![
            QuadTerm {
                row: row_p.clone(),
                offset: local.u_ss[0] - targets.p_im_kpa,
                weight: cfg.alpha,
            },
            QuadTerm {
                row: row_chi.clone(),
                offset: local.u_ss[1] - targets.chi_egr,
                weight: cfg.beta,
            },
        ];
        // Fuel shortfall γ·(w_trg − w) per stage, dropping the constant.
        let lin_z = &row_w * -cfg.gamma;
        let one_norm = vec![OneNormTerm {
            row: row_nox,
            offset: local.x_ss[0],
            weight: self.eta,
        }];
        let soft = if self.soot_limit {
            // A small quadratic component keeps the slack block strictly
            // convex, so riding the ceiling stays numerically benign.
            vec![SoftRow {
                row: row_soot,
                ub: cfg.soot_max_pct - local.x_ss[1],
                linear_weight: cfg.zeta,
                quad_weight: 0.1 * cfg.zeta,
            }]
        } else {
            Vec::new()
        };
        let hard = vec![
            // Fuel band: 0.9·w_trg ≤ w ≤ w_trg.
            HardRow {
                row: row_w.clone(),
                ub: w_trg - local.u_ss[2],
            },
            HardRow {
                row: -&row_w,
                ub: local.u_ss[2] - 0.9 * w_trg,
            },
            // EGR fraction target within [0, 1].
            HardRow {
                row: row_chi.clone(),
                ub: 1.0 - local.u_ss[1],
            },
            HardRow {
                row: -&row_chi,
                ub: local.u_ss[1],
            },
            // Boost-pressure target range.
            HardRow {
                row: row_p.clone(),
                ub: cfg.p_im_max_kpa - local.u_ss[0],
            },
            HardRow {
                row: -&row_p,
                ub: local.u_ss[0] - cfg.p_im_min_kpa,
            },
        ];

        // Move penalty on physical increments: Δũᵀ (Dσ R Dσ) Δũ = Δuᵀ R Δu.
        let r_du = DMatrix::from_fn(n_u, n_u, |i, j| cfg.r[i][j] * su[i] * su[j]);

        let spec = CondenseSpec {
            rate,
            horizon: Horizon {
                n: cfg.horizon,
                dt: self.dt,
            },
            z0,
            r_du,
            lin_z,
            quad,
            terminal_quad: Vec::new(),
            one_norm,
            soft,
            hard,
            du_min: DVector::from_element(n_u, f64::NEG_INFINITY),
            du_max: DVector::from_element(n_u, f64::INFINITY),
        };
        let condensed = condense(&spec)?;
        let sol = solve_qp(&condensed.qp)?.into_optimal()?;

        // First move back to physical units, clamped to the same limits the
        // QP enforced (guards the downstream layers against numerical dust).
        let du0 = condensed.first_du(&sol.w);
        let u0: Vec<f64> = (0..n_u).map(|i| u_prev[i] + su[i] * du0[i]).collect();
        let p_adj = u0[0].clamp(cfg.p_im_min_kpa, cfg.p_im_max_kpa);
        let chi_adj = u0[1].clamp(0.0, 1.0);
        let w_adj = u0[2].clamp(0.9 * w_trg, w_trg);

        let z1 = condensed.predicted_state(&sol.w, 1);
        // Absolute normalized state at stage 1 is Δx + x_prev.
        let nox1 = local.x_ss[0] + sx[0] * (z1[0] + z1[2]);
        let slack = if self.soot_limit {
            sol.w[condensed.layout.eps_index(0, 0)]
        } else {
            0.0
        };

        self.held = Some(HeldMove {
            p_im_kpa: p_adj,
            chi_egr: chi_adj,
            fuel_ratio: if w_trg > 0.0 { w_adj / w_trg } else { 1.0 },
        });
        Ok((
            AdjustedTargets {
                p_im_kpa: p_adj,
                chi_egr: chi_adj,
                w_inj_mm3: w_adj,
            },
            slack,
            nox1,
        ))
    }
}
