//! Synthetic dataset generation: a randomized steady-state grid and a
//! band-limited transient excitation log, both recorded from the plant.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::plant::{ActuatorInput, OperatingPoint, Plant, CANDIDATE_NAMES, PRE_FUEL_CHANNEL};
use crate::rng::{stream, Stream};

use super::types::{Dataset, Sample, SampleKind};

/// Default number of steady-state grid points.
pub const STEADY_POINTS: usize = 306;

/// Default number of transient log samples (1200 s at 10 Hz, inclusive).
pub const TRANSIENT_SAMPLES: usize = 12001;

/// Half-width of the pre-injection dither around its nominal quantity.
const PRE_FUEL_DITHER: f64 = 0.3;

fn candidate_columns() -> Vec<String> {
    CANDIDATE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Remove from `d` its projection onto each column of `basis` (in order),
/// leaving `d` orthogonal to all of them. The basis columns are assumed
/// linearly independent.
fn orthogonalize(d: &mut [f64], basis: &[Vec<f64>]) {
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let mut q = b.clone();
        for prev in &ortho {
            let dot: f64 = q.iter().zip(prev).map(|(a, b)| a * b).sum();
            let nn: f64 = prev.iter().map(|v| v * v).sum();
            if nn > 0.0 {
                for (qi, pi) in q.iter_mut().zip(prev) {
                    *qi -= dot / nn * pi;
                }
            }
        }
        ortho.push(q);
    }
    for q in &ortho {
        let dot: f64 = d.iter().zip(q).map(|(a, b)| a * b).sum();
        let nn: f64 = q.iter().map(|v| v * v).sum();
        if nn > 0.0 {
            for (di, qi) in d.iter_mut().zip(q) {
                *di -= dot / nn * qi;
            }
        }
    }
}

/// Record `count` randomized steady-state operating points.
///
/// Each point draws a speed/fuel/EGR/VGT setting from the envelope, solves
/// the plant equilibrium, and logs the candidate sensor channels with the
/// settled emissions as targets. The pre-injection channel gets a small
/// dither that is explicitly orthogonalized against both targets (and the
/// constant), so its steady-state correlation is zero to rounding — the
/// channel carries no usable information at rest.
pub fn generate_steady(plant: &Plant, count: usize, seed: u64) -> Result<Dataset> {
    let cfg = &plant.cfg;
    let mut rng: ChaCha8Rng = stream(seed, Stream::SteadyData, 0);
    let mut dataset = Dataset::new(candidate_columns());
    let mut dither = Vec::with_capacity(count);
    for _ in 0..count {
        let rho = OperatingPoint::new(
            rng.gen_range(cfg.speed_min_rpm..=cfg.speed_max_rpm),
            rng.gen_range(0.0..=cfg.fuel_max_mm3),
        );
        let v = ActuatorInput::new(rng.gen_range(0.0..=100.0), rng.gen_range(0.0..=100.0));
        let eq = plant.equilibrium(v, rho)?;
        let channels = plant.candidate_channels(&eq, v, rho);
        let em = plant.emission_truth(&eq, v, rho);
        dataset.samples.push(Sample {
            kind: SampleKind::Steady,
            t: 0.0,
            inputs: channels.to_vec(),
            targets: [em.nox, em.soot],
        });
        dither.push(rng.gen_range(-PRE_FUEL_DITHER..=PRE_FUEL_DITHER));
    }
    let ones = vec![1.0; count];
    let nox: Vec<f64> = dataset.samples.iter().map(|s| s.targets[0]).collect();
    let soot: Vec<f64> = dataset.samples.iter().map(|s| s.targets[1]).collect();
    orthogonalize(&mut dither, &[ones, nox, soot]);
    for (s, d) in dataset.samples.iter_mut().zip(&dither) {
        s.inputs[PRE_FUEL_CHANNEL] += d;
    }
    dataset.validate()?;
    Ok(dataset)
}

/// Piecewise excitation signal: holds a level for a random dwell, then
/// ramps to a fresh level over a random transition time.
struct Excitation {
    lo: f64,
    hi: f64,
    current: f64,
    target: f64,
    /// Steps left in the current dwell (no movement).
    hold: usize,
    /// Per-step increment while ramping.
    rate: f64,
}

impl Excitation {
    fn new(lo: f64, hi: f64, start: f64) -> Self {
        Self {
            lo,
            hi,
            current: start,
            target: start,
            hold: 0,
            rate: 0.0,
        }
    }

    /// Advance one sample step of length `dt`.
    fn step<R: Rng>(&mut self, rng: &mut R, dt: f64) -> f64 {
        if self.hold > 0 {
            self.hold -= 1;
        } else if (self.current - self.target).abs() <= self.rate.abs().max(1e-12) {
            self.current = self.target;
            // Pick the next set-point, transition time, and dwell.
            self.target = rng.gen_range(self.lo..=self.hi);
            let ramp_s = rng.gen_range(0.3..3.0);
            self.rate = (self.target - self.current) / (ramp_s / dt).max(1.0);
            self.hold = (rng.gen_range(1.0..8.0) / dt) as usize;
        } else {
            self.current += self.rate;
        }
        self.current
    }
}

/// Record a seeded transient excitation log of `count` samples at the
/// plant's base rate.
///
/// Speed, fuel, EGR, and VGT each follow independent dwell-and-ramp
/// profiles spanning the envelope. Targets are the lagged sensor readings,
/// so samples taken mid-transient sit away from the steady manifold — the
/// raw material for outlier rejection. The pre-injection channel carries a
/// slow first-order-filtered dither independent of everything else; with
/// 12001 samples its sample correlation with the targets sits at the
/// 1/sqrt(n) chance level, well under the screening threshold.
pub fn generate_transient(plant: &Plant, count: usize, seed: u64) -> Result<Dataset> {
    let cfg = &plant.cfg;
    let dt = cfg.dt;
    let mut rng: ChaCha8Rng = stream(seed, Stream::TransientData, 0);
    let mut speed = Excitation::new(
        cfg.speed_min_rpm,
        cfg.speed_max_rpm,
        0.5 * (cfg.speed_min_rpm + cfg.speed_max_rpm),
    );
    let mut fuel = Excitation::new(0.0, cfg.fuel_max_mm3, 0.3 * cfg.fuel_max_mm3);
    let mut egr = Excitation::new(0.0, 100.0, 30.0);
    let mut vgt = Excitation::new(0.0, 100.0, 50.0);

    let rho0 = OperatingPoint::new(speed.current, fuel.current);
    let v0 = ActuatorInput::new(egr.current, vgt.current);
    let mut state = plant.equilibrium(v0, rho0)?;

    // First-order low-pass on uniform noise, time constant ~2 s.
    let mut pre_dither = 0.0;
    let alpha = dt / 2.0;

    let mut dataset = Dataset::new(candidate_columns());
    for i in 0..count {
        let rho = OperatingPoint::new(speed.step(&mut rng, dt), fuel.step(&mut rng, dt));
        let v = ActuatorInput::new(egr.step(&mut rng, dt), vgt.step(&mut rng, dt));
        state = plant.step(&state, v, rho);
        pre_dither += alpha * (rng.gen_range(-1.0..=1.0) * PRE_FUEL_DITHER * 3.0 - pre_dither);
        let mut channels = plant.candidate_channels(&state, v, rho);
        channels[PRE_FUEL_CHANNEL] += pre_dither;
        let em = state.measured_emissions();
        dataset.samples.push(Sample {
            kind: SampleKind::Transient,
            t: i as f64 * dt,
            inputs: channels.to_vec(),
            targets: [em.nox, em.soot],
        });
    }
    dataset.validate()?;
    Ok(dataset)
}
