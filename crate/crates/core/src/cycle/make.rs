//! Built-in drive cycles: a deterministic step/ramp probe and two seeded
//! band-limited transient profiles.

use std::f64::consts::TAU;

use rand::Rng;

use crate::plant::OperatingPoint;
use crate::rng::{stream, Stream};

use super::types::DriveCycle;

/// Base sample spacing of the built-in cycles [s]; matches the plant step.
pub const CYCLE_DT_S: f64 = 0.1;

/// Builds the step/ramp probe cycle:
///
/// * 30 s warm-up at 1600 rpm / 25 mm3;
/// * fuel tips in to 85 mm3 at t = 30 s and back out to 25 mm3 at
///   t = 50 s (the only two fuel discontinuities);
/// * speed ramps linearly 1600 → 2800 rpm over t = 70..100 s and holds;
/// * the cycle ends at t = 110 s.
///
/// Speed is continuous piecewise-linear throughout.
pub fn make_step_ramp_cycle() -> DriveCycle {
    let dt = CYCLE_DT_S;
    let n = (110.0_f64 / dt).round() as usize;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            let fuel = if (30.0..50.0).contains(&t) { 85.0 } else { 25.0 };
            let speed = if t < 70.0 {
                1600.0
            } else if t < 100.0 {
                1600.0 + (2800.0 - 1600.0) * (t - 70.0) / 30.0
            } else {
                2800.0
            };
            OperatingPoint::new(speed, fuel)
        })
        .collect();
    DriveCycle {
        name: "step_ramp".into(),
        dt,
        warmup_s: 30.0,
        samples,
    }
}

/// Spectral character of the seeded transient cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransientKind {
    /// Urban-style profile: faster demand content (up to 0.12 Hz).
    FtpLike,
    /// Highway/world-harmonised-style profile: slower content (up to 0.05 Hz).
    WhtcLike,
}

impl TransientKind {
    /// Stable per-kind stream index, so the two kinds never share a stream.
    fn stream_index(self) -> u64 {
        match self {
            TransientKind::FtpLike => 0,
            TransientKind::WhtcLike => 1,
        }
    }

    fn f_max_hz(self) -> f64 {
        match self {
            TransientKind::FtpLike => 0.12,
            TransientKind::WhtcLike => 0.05,
        }
    }

    fn cycle_name(self) -> &'static str {
        match self {
            TransientKind::FtpLike => "ftp_like",
            TransientKind::WhtcLike => "whtc_like",
        }
    }
}

/// A random-phase multisine: `n_components` tones log-spaced over
/// [f_min, f_max] with small per-tone frequency jitter, amplitudes tapered
/// as 1/sqrt(1+m) and normalised so the summed amplitude is 1.
struct Multisine {
    freqs_hz: Vec<f64>,
    phases: Vec<f64>,
    amps: Vec<f64>,
}

impl Multisine {
    fn sample(rng: &mut impl Rng, f_min: f64, f_max: f64, n_components: usize) -> Self {
        let mut freqs_hz = Vec::with_capacity(n_components);
        let mut phases = Vec::with_capacity(n_components);
        let mut amps = Vec::with_capacity(n_components);
        let ratio = f_max / f_min;
        for m in 0..n_components {
            let frac = m as f64 / (n_components - 1) as f64;
            let jitter: f64 = rng.gen_range(-0.10..0.10);
            freqs_hz.push(f_min * ratio.powf(frac) * (1.0 + jitter));
            phases.push(rng.gen_range(0.0..TAU));
            amps.push(1.0 / (1.0 + m as f64).sqrt());
        }
        let total: f64 = amps.iter().sum();
        for a in &mut amps {
            *a /= total;
        }
        Multisine {
            freqs_hz,
            phases,
            amps,
        }
    }

    /// Value at time t, in [-1, 1] by the amplitude normalisation.
    fn at(&self, t: f64) -> f64 {
        self.freqs_hz
            .iter()
            .zip(&self.phases)
            .zip(&self.amps)
            .map(|((f, ph), a)| a * (TAU * f * t + ph).sin())
            .sum()
    }
}

/// Builds a seeded transient cycle: 100 s warm-up followed by 600 s of
/// band-limited speed/fuel excitation. The same `(kind, root_seed)` pair
/// always yields the identical cycle; different kinds and seeds differ.
pub fn make_transient_cycle(kind: TransientKind, root_seed: u64) -> DriveCycle {
    let dt = CYCLE_DT_S;
    let warmup_s = 100.0;
    let active_steps = (600.0_f64 / dt).round() as usize;
    let warmup_steps = (warmup_s / dt).round() as usize;

    let mut rng = stream(root_seed, Stream::DriveCycle, kind.stream_index());
    let f_min = 0.0125;
    let f_max = kind.f_max_hz();
    let speed_wave = Multisine::sample(&mut rng, f_min, f_max, 10);
    let fuel_wave = Multisine::sample(&mut rng, f_min, f_max, 10);

    let active: Vec<OperatingPoint> = (0..active_steps)
        .map(|k| {
            let t = k as f64 * dt;
            let speed = (2000.0 + 1600.0 * speed_wave.at(t)).clamp(850.0, 3150.0);
            let fuel = (60.0 + 85.0 * fuel_wave.at(t)).clamp(5.0, 115.0);
            OperatingPoint::new(speed, fuel)
        })
        .collect();

    // Warm-up holds the first active operating point so the transition into
    // the scored segment is seamless.
    let mut samples = vec![active[0]; warmup_steps];
    samples.extend(active);

    DriveCycle {
        name: kind.cycle_name().into(),
        dt,
        warmup_s,
        samples,
    }
}
