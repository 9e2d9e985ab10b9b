//! Per-node perturbation experiments: settle the plant at a grid node,
//! dither the actuators (and fuel) with a seeded pseudo-random binary
//! sequence, and log the channels both local model families are fitted
//! from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::nn::MlpModel;
use crate::plant::{egr_rate, ActuatorInput, OperatingPoint, Plant};

/// Shape of the excitation applied on top of the node's nominal inputs.
///
/// Each channel is dithered with an independent binary sequence that
/// redraws its sign every `dwell_steps` plant steps. Applied commands are
/// clamped to the physical ranges (0..100 % for actuators, 0..fuel_max
/// for fuel), so amplitudes near an envelope edge give one-sided
/// excitation rather than an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Experiment length [s]; the log holds duration/dt samples.
    pub duration_s: f64,
    /// Steps between sign redraws of the actuator (EGR/VGT) sequences.
    pub dwell_steps: usize,
    /// Steps between sign redraws of the fuel sequence. Fuel moves the
    /// emission outputs almost instantaneously, so it is held longer
    /// than the actuators: a one-step predictor cannot anticipate a
    /// dither flip, and too-frequent flips would drown the fit quality
    /// metric in irreducible error.
    pub fuel_dwell_steps: usize,
    /// EGR valve dither amplitude [% of range], +/- around nominal.
    pub egr_amplitude_pct: f64,
    /// VGT vane dither amplitude [% of range], +/- around nominal.
    pub vgt_amplitude_pct: f64,
    /// Fuel dither amplitude [mm3/st], +/- around the node fuel quantity.
    pub fuel_amplitude_mm3: f64,
}

impl Default for PerturbationSpec {
    /// Reference excitation: 200 s per node at 5 % of the actuator range
    /// and 5 % of the fuel range; actuator signs held for half a second,
    /// fuel held for two seconds.
    fn default() -> Self {
        PerturbationSpec {
            duration_s: 200.0,
            dwell_steps: 5,
            fuel_dwell_steps: 20,
            egr_amplitude_pct: 5.0,
            vgt_amplitude_pct: 5.0,
            fuel_amplitude_mm3: 6.0,
        }
    }
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(CoreError::invalid("perturbation duration must be positive"));
        }
        if self.dwell_steps == 0 || self.fuel_dwell_steps == 0 {
            return Err(CoreError::invalid("perturbation dwell must be at least 1 step"));
        }
        let amps = [
            self.egr_amplitude_pct,
            self.vgt_amplitude_pct,
            self.fuel_amplitude_mm3,
        ];
        if amps.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(CoreError::invalid(
                "perturbation amplitudes must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Time series recorded during one node experiment.
///
/// Row `k` holds the plant state reached at time `k*dt` together with the
/// commands applied over the following step, so consecutive rows form
/// one-step-ahead training pairs. Row 0 is the settled equilibrium.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    /// Node this experiment was run at.
    pub rho: OperatingPoint,
    /// Sample interval [s] (the plant step).
    pub dt: f64,
    /// Nominal actuator positions the dither is centered on.
    pub nominal: ActuatorInput,
    /// Excitation description.
    pub perturbation: PerturbationSpec,
    /// Equilibrium intake pressure [kPa].
    pub eq_p_im: f64,
    /// Equilibrium EGR rate [-].
    pub eq_chi: f64,
    /// Surrogate NOx at the equilibrium [ppm].
    pub eq_nox: f64,
    /// Surrogate soot at the equilibrium [%].
    pub eq_soot: f64,
    /// Intake manifold pressure [kPa].
    pub p_im: Vec<f64>,
    /// EGR rate [-].
    pub chi_egr: Vec<f64>,
    /// Fuel quantity applied after clamping [mm3/st].
    pub w_inj: Vec<f64>,
    /// EGR valve command applied after clamping [%].
    pub egr_pos: Vec<f64>,
    /// VGT vane command applied after clamping [%].
    pub vgt_pos: Vec<f64>,
    /// Surrogate NOx output [ppm].
    pub nox: Vec<f64>,
    /// Surrogate soot output [%].
    pub soot: Vec<f64>,
}

impl ExperimentLog {
    /// Number of samples.
    pub fn len(&self) -> usize {
        self.p_im.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_im.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.p_im.len();
        let series = [
            &self.chi_egr,
            &self.w_inj,
            &self.egr_pos,
            &self.vgt_pos,
            &self.nox,
            &self.soot,
        ];
        if series.iter().any(|s| s.len() != n) {
            return Err(CoreError::invalid("experiment log series have unequal lengths"));
        }
        if self
            .egr_pos
            .iter()
            .chain(self.vgt_pos.iter())
            .any(|v| !(0.0..=100.0).contains(v))
        {
            return Err(CoreError::invalid(
                "experiment log actuator commands outside 0..100 range",
            ));
        }
        Ok(())
    }
}

/// Binary dither sequences: actuator signs redraw every `dwell` steps,
/// the fuel sign every `fuel_dwell` steps, always in a fixed channel
/// order so the log is a pure function of the RNG stream.
struct Dither<R: Rng> {
    rng: R,
    dwell: usize,
    fuel_dwell: usize,
    signs: [f64; 3],
}

impl<R: Rng> Dither<R> {
    fn new(rng: R, dwell: usize, fuel_dwell: usize) -> Self {
        Dither {
            rng,
            dwell,
            fuel_dwell,
            signs: [0.0; 3],
        }
    }

    fn draw(&mut self) -> f64 {
        if self.rng.gen_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    }

    fn at(&mut self, step: usize) -> [f64; 3] {
        if step % self.dwell == 0 {
            self.signs[0] = self.draw();
            self.signs[1] = self.draw();
        }
        if step % self.fuel_dwell == 0 {
            self.signs[2] = self.draw();
        }
        self.signs
    }
}

/// Run one perturbation experiment at `node`.
///
/// The plant is settled at the node equilibrium under `nominal` actuator
/// positions (an error if no equilibrium is found), then stepped for
/// `spec.duration_s` seconds under the dithered commands. Emissions are
/// read from the surrogate network at every sample, so the log captures
/// the plant/surrogate composition the local models are meant to mimic.
pub fn run_perturbation(
    plant: &Plant,
    nn: &MlpModel,
    node: OperatingPoint,
    nominal: ActuatorInput,
    spec: &PerturbationSpec,
    rng: &mut impl Rng,
) -> Result<ExperimentLog> {
    spec.validate()?;
    let cfg = &plant.cfg;
    if !(cfg.speed_min_rpm..=cfg.speed_max_rpm).contains(&node.speed_rpm)
        || !(0.0..=cfg.fuel_max_mm3).contains(&node.fuel_mm3)
    {
        return Err(CoreError::invalid(format!(
            "node ({:.0} rpm, {:.1} mm3) outside engine envelope",
            node.speed_rpm, node.fuel_mm3
        )));
    }
    let steps = (spec.duration_s / cfg.dt).round() as usize;
    if steps == 0 {
        return Err(CoreError::invalid("perturbation duration shorter than one step"));
    }

    let mut state = plant.equilibrium(nominal, node).map_err(|e| {
        CoreError::numerical(format!(
            "failed to settle at node ({:.0} rpm, {:.1} mm3): {e}",
            node.speed_rpm, node.fuel_mm3
        ))
    })?;
    let eq_meas = plant.measurement_vector(&state, nominal, node);
    let eq_em = nn.forward(&eq_meas)?;

    let mut log = ExperimentLog {
        rho: node,
        dt: cfg.dt,
        nominal,
        perturbation: *spec,
        eq_p_im: state.air.p_im,
        eq_chi: egr_rate(&state),
        eq_nox: eq_em[0],
        eq_soot: eq_em[1],
        p_im: Vec::with_capacity(steps),
        chi_egr: Vec::with_capacity(steps),
        w_inj: Vec::with_capacity(steps),
        egr_pos: Vec::with_capacity(steps),
        vgt_pos: Vec::with_capacity(steps),
        nox: Vec::with_capacity(steps),
        soot: Vec::with_capacity(steps),
    };

    let mut dither = Dither::new(rng, spec.dwell_steps, spec.fuel_dwell_steps);
    for k in 0..steps {
        let s = dither.at(k);
        let v = ActuatorInput::new(
            nominal.egr_pos + s[0] * spec.egr_amplitude_pct,
            nominal.vgt_pos + s[1] * spec.vgt_amplitude_pct,
        )
        .clamped();
        let fuel = (node.fuel_mm3 + s[2] * spec.fuel_amplitude_mm3).clamp(0.0, cfg.fuel_max_mm3);
        let rho = OperatingPoint::new(node.speed_rpm, fuel);

        let em = nn.forward(&plant.measurement_vector(&state, v, rho))?;
        log.p_im.push(state.air.p_im);
        log.chi_egr.push(egr_rate(&state));
        log.w_inj.push(fuel);
        log.egr_pos.push(v.egr_pos);
        log.vgt_pos.push(v.vgt_pos);
        log.nox.push(em[0]);
        log.soot.push(em[1]);

        state = plant.step(&state, v, rho);
    }
    log.validate()?;
    Ok(log)
}
