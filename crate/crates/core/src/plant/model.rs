//! Mean-value engine dynamics, emission maps and virtual sensors.
//!
//! Airpath states: intake pressure, exhaust pressure, turbo speed.
//!
//!   dp_im/dt = k_im (w_c + w_egr - w_e)
//!   dp_ex/dt = k_ex (w_e + w_f - w_egr - w_t)
//!   dn_t/dt  = (n_target(P_t) - n_t) / tau_turbo
//!
//! with algebraic flows: speed-density engine flow `w_e`, compressor flow
//! `w_c` rising with turbo speed and falling with boost, an EGR valve flow
//! `w_egr` driven by `p_ex - p_im`, and a turbine flow `w_t` through a
//! variable vane area. The turbo target speed is a saturating function of
//! exhaust back-pressure. Static NOx/soot maps are filtered by first-order
//! sensor lags. By construction the static maps are monotone: NOx falls and
//! soot rises with EGR rate, and soot rises with fuelling.

use super::config::PlantConfig;
use super::types::{ActuatorInput, AirpathState, EmissionState, OperatingPoint, PlantState};
use crate::error::{CoreError, Result};

/// Smooth max(x, 0) with width `w`; keeps flow laws C^1 near zero pressure
/// difference so both the integrator and the equilibrium Newton behave.
fn smooth_pos(x: f64, w: f64) -> f64 {
    0.5 * (x + (x * x + w * w).sqrt())
}

/// Names of the 11 candidate sensor channels, in logging order.
pub const CANDIDATE_NAMES: [&str; 11] = [
    "inj_press",
    "inj_timing",
    "main_fuel",
    "pre_fuel",
    "torque",
    "speed",
    "pim",
    "pex",
    "maf",
    "egr_pos",
    "vgt_pos",
];

/// Index of the pre-injection channel inside [`CANDIDATE_NAMES`]; the one
/// candidate that carries no emission information by design.
pub const PRE_FUEL_CHANNEL: usize = 3;

/// Names of the 10 channels of [`Plant::measurement_vector`].
pub const MEASUREMENT_NAMES: [&str; 10] = [
    "inj_press",
    "inj_timing",
    "main_fuel",
    "torque",
    "speed",
    "pim",
    "pex",
    "maf",
    "egr_pos",
    "vgt_pos",
];

#[derive(Debug, Clone, Copy)]
struct Flows {
    w_c: f64,
    w_egr: f64,
    w_e: f64,
    w_t: f64,
    w_f: f64,
}

/// The synthetic engine. Wraps a [`PlantConfig`] and provides pure,
/// deterministic dynamics and sensor maps.
#[derive(Debug, Clone)]
pub struct Plant {
    pub cfg: PlantConfig,
}

impl Plant {
    pub fn new(cfg: PlantConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Plant { cfg })
    }

    pub fn reference() -> Self {
        Plant {
            cfg: PlantConfig::reference(),
        }
    }

    /// Fuel mass flow [g/s] for a given speed and injected quantity.
    pub fn fuel_flow(&self, rho: OperatingPoint) -> f64 {
        let injections_per_s = rho.speed_rpm * self.cfg.cylinders / 120.0;
        injections_per_s * rho.fuel_mm3.max(0.0) * self.cfg.rho_fuel
    }

    /// Compressor source pressure: the boost level the wheel can hold at a
    /// given speed. The windmilling floor keeps it slightly above ambient.
    fn source_pressure(&self, n_turb: f64) -> f64 {
        let c = &self.cfg;
        c.p_amb * (1.0 + c.boost_gain * n_turb.max(0.0).powf(1.5))
    }

    fn flows(
        &self,
        p_im: f64,
        p_ex: f64,
        n_turb: f64,
        v: ActuatorInput,
        rho: OperatingPoint,
    ) -> Flows {
        let c = &self.cfg;
        let v = v.clamped();
        // Compressor as a supply curve: flow proportional to the margin
        // between the speed-dependent source pressure and the manifold.
        let w_c = c.c_comp * smooth_pos(self.source_pressure(n_turb) - p_im, c.sp_width);
        // EGR valve: driven by the exhaust-to-intake pressure drop.
        let w_egr = (v.egr_pos / 100.0) * c.c_egr * smooth_pos(p_ex - p_im, c.sp_width);
        // Speed-density engine aspiration. Density in g/m3 from p [kPa].
        let rho_im = p_im / (2.87e-4 * c.t_im);
        let w_e = c.eta_vol * c.v_d * (rho.speed_rpm / 120.0) * rho_im;
        // Turbine through the variable vane area (vgt_pos = % closed).
        let area = 1.0 - c.area_min_frac * (v.vgt_pos / 100.0);
        let w_t = c.c_turb * area * smooth_pos(p_ex - c.p_amb, c.sp_width);
        let w_f = self.fuel_flow(rho);
        Flows {
            w_c,
            w_egr,
            w_e,
            w_t,
            w_f,
        }
    }

    /// Time derivatives of the five dynamic states
    /// (p_im, p_ex, n_turb, nox, soot).
    fn derivs(&self, x: &[f64; 5], v: ActuatorInput, rho: OperatingPoint) -> [f64; 5] {
        let c = &self.cfg;
        let fl = self.flows(x[0], x[1], x[2], v, rho);
        let dp_im = c.k_im * (fl.w_c + fl.w_egr - fl.w_e);
        let dp_ex = c.k_ex * (fl.w_e + fl.w_f - fl.w_egr - fl.w_t);
        // Turbo spool law: target speed rises with exhaust back-pressure
        // (helped by closed vanes) and saturates through tanh; the
        // windmilling floor prevents a dead-turbo second equilibrium.
        let back_pressure = smooth_pos(x[1] - c.p_amb, c.sp_width);
        let vane_boost = 1.0 + c.vgt_spool_gain * v.vgt_pos / 100.0;
        let span = c.n_turb_max - c.n_turb_base;
        let n_target =
            c.n_turb_base + span * (c.k_spool * back_pressure * vane_boost / span).tanh();
        let dn = (n_target - x[2]) / c.tau_turbo;
        let chi = egr_fraction(fl.w_egr, fl.w_c);
        let stat = self.static_emissions(x[0], chi, fl.w_c, rho);
        let dnox = (stat.nox - x[3]) / c.tau_nox;
        let dsoot = (stat.soot - x[4]) / c.tau_soot;
        [dp_im, dp_ex, dn, dnox, dsoot]
    }

    fn static_emissions(
        &self,
        p_im: f64,
        chi: f64,
        w_c: f64,
        rho: OperatingPoint,
    ) -> EmissionState {
        let c = &self.cfg;
        let fuel_frac = (rho.fuel_mm3.max(0.0) / c.fuel_max_mm3).min(1.5);
        let speed_frac = (rho.speed_rpm - c.speed_min_rpm) / (c.speed_max_rpm - c.speed_min_rpm);
        let nox = c.nox_floor
            + c.nox_gain
                * fuel_frac.powf(c.nox_fuel_exp)
                * (-c.nox_egr_sens * chi).exp()
                * (c.nox_speed_base + (1.0 - c.nox_speed_base) * speed_frac.clamp(0.0, 1.0))
                * (1.0 + c.nox_boost_sens * (p_im / c.p_amb - 1.0).max(0.0));
        // Air/fuel ratio from the actual fresh-air flow; richer mixtures
        // (low afr) saturate the soot map upward.
        let w_f = self.fuel_flow(rho);
        let afr = if w_f > 1e-9 { w_c / w_f } else { 1e6 };
        let soot = c.soot_floor
            + c.soot_gain * fuel_frac.powf(c.soot_fuel_exp) * (c.soot_egr_sens * chi).exp()
                / (1.0 + (afr / c.afr_ref).powi(2));
        EmissionState { nox, soot }
    }

    /// Instantaneous emission response for the current state. The plant's
    /// sensor outputs chase this value through first-order lags.
    ///
    /// Monotone by construction: higher EGR rate lowers NOx and raises soot;
    /// more fuel raises soot. Zero fuelling returns the floor values.
    pub fn emission_truth(
        &self,
        state: &PlantState,
        v: ActuatorInput,
        rho: OperatingPoint,
    ) -> EmissionState {
        let _ = v;
        let chi = egr_rate(state);
        self.static_emissions(state.air.p_im, chi, state.air.w_c, rho)
    }

    /// Advance the plant by one base sample period `dt` (RK4 with substeps).
    /// Pure: identical arguments give a bitwise identical result.
    pub fn step(&self, state: &PlantState, v: ActuatorInput, rho: OperatingPoint) -> PlantState {
        let c = &self.cfg;
        let v = v.clamped();
        let mut x = [
            state.air.p_im,
            state.air.p_ex,
            state.air.n_turb,
            state.nox,
            state.soot,
        ];
        let h = c.dt / c.sub_steps as f64;
        for _ in 0..c.sub_steps {
            let k1 = self.derivs(&x, v, rho);
            let x2 = add_scaled(&x, &k1, 0.5 * h);
            let k2 = self.derivs(&x2, v, rho);
            let x3 = add_scaled(&x, &k2, 0.5 * h);
            let k3 = self.derivs(&x3, v, rho);
            let x4 = add_scaled(&x, &k3, h);
            let k4 = self.derivs(&x4, v, rho);
            for i in 0..5 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            // Physical floors: pressures cannot drop below vacuum-ish
            // levels, turbo speed and emissions cannot go negative.
            x[0] = x[0].max(20.0);
            x[1] = x[1].max(20.0);
            x[2] = x[2].max(0.0);
            x[3] = x[3].max(0.0);
            x[4] = x[4].max(0.0);
        }
        let fl = self.flows(x[0], x[1], x[2], v, rho);
        PlantState {
            air: AirpathState {
                p_im: x[0],
                p_ex: x[1],
                n_turb: x[2],
                w_c: fl.w_c,
                w_egr: fl.w_egr,
            },
            nox: x[3],
            soot: x[4],
        }
    }

    /// Solve for the steady state under constant `(v, rho)`.
    ///
    /// Damped Newton on the three airpath residuals (finite-difference
    /// Jacobian) with a simulation fallback; emission lags are set to their
    /// static values at the converged airpath state.
    pub fn equilibrium(&self, v: ActuatorInput, rho: OperatingPoint) -> Result<PlantState> {
        let c = &self.cfg;
        let v = v.clamped();
        let resid = |x: &[f64; 3]| -> [f64; 3] {
            let d = self.derivs(&[x[0], x[1], x[2], 0.0, 0.0], v, rho);
            [d[0], d[1], d[2]]
        };
        let mut x = [c.p_amb + 20.0, c.p_amb + 40.0, 0.6];
        let mut converged = false;
        for _ in 0..60 {
            let r = resid(&x);
            let rn = norm3(&r);
            if rn < 1e-10 {
                converged = true;
                break;
            }
            // Finite-difference Jacobian.
            let mut jac = [[0.0f64; 3]; 3];
            for j in 0..3 {
                let h = 1e-6 * x[j].abs().max(1e-3);
                let mut xp = x;
                xp[j] += h;
                let rp = resid(&xp);
                for i in 0..3 {
                    jac[i][j] = (rp[i] - r[i]) / h;
                }
            }
            let Some(dx) = solve3(&jac, &[-r[0], -r[1], -r[2]]) else {
                break;
            };
            // Backtracking line search on the residual norm.
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..20 {
                let xt = [
                    (x[0] + alpha * dx[0]).max(20.0),
                    (x[1] + alpha * dx[1]).max(20.0),
                    (x[2] + alpha * dx[2]).max(0.0),
                ];
                if norm3(&resid(&xt)) < rn {
                    x = xt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        if !converged {
            // Fall back to integrating towards the fixed point.
            let fl = self.flows(x[0], x[1], x[2], v, rho);
            let chi = egr_fraction(fl.w_egr, fl.w_c);
            let em = self.static_emissions(x[0], chi, fl.w_c, rho);
            let mut s = PlantState {
                air: AirpathState {
                    p_im: x[0],
                    p_ex: x[1],
                    n_turb: x[2],
                    w_c: fl.w_c,
                    w_egr: fl.w_egr,
                },
                nox: em.nox,
                soot: em.soot,
            };
            for _ in 0..6000 {
                let next = self.step(&s, v, rho);
                let delta = (next.air.p_im - s.air.p_im)
                    .abs()
                    .max((next.air.p_ex - s.air.p_ex).abs())
                    .max((next.air.n_turb - s.air.n_turb).abs());
                s = next;
                if delta < 1e-11 {
                    x = [s.air.p_im, s.air.p_ex, s.air.n_turb];
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(CoreError::numerical(format!(
                    "plant equilibrium did not converge at speed {:.0} rpm, fuel {:.1} mm3",
                    rho.speed_rpm, rho.fuel_mm3
                )));
            }
        }
        let fl = self.flows(x[0], x[1], x[2], v, rho);
        let chi = egr_fraction(fl.w_egr, fl.w_c);
        let em = self.static_emissions(x[0], chi, fl.w_c, rho);
        Ok(PlantState {
            air: AirpathState {
                p_im: x[0],
                p_ex: x[1],
                n_turb: x[2],
                w_c: fl.w_c,
                w_egr: fl.w_egr,
            },
            nox: em.nox,
            soot: em.soot,
        })
    }

    /// The 11 candidate sensor channels in the order of [`CANDIDATE_NAMES`].
    /// Includes the pre-injection quantity, a calibration constant that by
    /// design carries no emission information.
    pub fn candidate_channels(
        &self,
        state: &PlantState,
        v: ActuatorInput,
        rho: OperatingPoint,
    ) -> [f64; 11] {
        let c = &self.cfg;
        let v = v.clamped();
        let rail =
            c.rail_base_mpa + c.rail_per_fuel * rho.fuel_mm3 + c.rail_per_rpm * rho.speed_rpm;
        let speed_frac = (rho.speed_rpm - c.speed_min_rpm) / (c.speed_max_rpm - c.speed_min_rpm);
        let timing =
            c.timing_base_deg + c.timing_speed_span * speed_frac - c.timing_per_fuel * rho.fuel_mm3;
        let boost = c.torque_boost_base + c.torque_boost_sens * state.air.p_im / c.p_amb;
        let torque = c.torque_per_fuel * rho.fuel_mm3 * boost
            - (c.friction_base_nm + c.friction_per_rpm * rho.speed_rpm);
        [
            rail,
            timing,
            rho.fuel_mm3,
            c.pre_fuel_mm3,
            torque,
            rho.speed_rpm,
            state.air.p_im,
            state.air.p_ex,
            state.air.w_c,
            v.egr_pos,
            v.vgt_pos,
        ]
    }

    /// The 10-channel measurement vector consumed by the emission surrogate,
    /// in the order of [`MEASUREMENT_NAMES`].
    pub fn measurement_vector(
        &self,
        state: &PlantState,
        v: ActuatorInput,
        rho: OperatingPoint,
    ) -> [f64; 10] {
        let all = self.candidate_channels(state, v, rho);
        let mut out = [0.0; 10];
        let mut k = 0;
        for (i, value) in all.iter().enumerate() {
            if i != PRE_FUEL_CHANNEL {
                out[k] = *value;
                k += 1;
            }
        }
        out
    }
}

/// EGR rate chi = w_egr / (w_egr + w_c) from the flows carried in the state.
pub fn egr_rate(state: &PlantState) -> f64 {
    egr_fraction(state.air.w_egr, state.air.w_c)
}

fn egr_fraction(w_egr: f64, w_c: f64) -> f64 {
    let total = w_egr + w_c;
    if total <= 1e-12 {
        0.0
    } else {
        (w_egr / total).clamp(0.0, 1.0)
    }
}

fn add_scaled(x: &[f64; 5], d: &[f64; 5], s: f64) -> [f64; 5] {
    let mut out = *x;
    for i in 0..5 {
        out[i] += s * d[i];
    }
    out
}

fn norm3(r: &[f64; 3]) -> f64 {
    (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
}

/// Solve a 3x3 linear system by Gaussian elimination with partial pivoting.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0f64; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let mut piv = col;
        for r in col + 1..3 {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for k in col..4 {
                    m[r][k] -= f * m[col][k];
                }
            }
        }
    }
    Some([m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]])
}
