//! Drive-cycle and metrics types.

use crate::control::{Scenario, TelemetryRow};
use crate::error::{CoreError, Result};
use crate::plant::{OperatingPoint, PlantConfig};

/// A prescribed speed/fuel trajectory sampled at the base step, with an
/// initial warm-up segment that every aggregate metric excludes.
#[derive(Debug, Clone, PartialEq)]
pub struct DriveCycle {
    pub name: String,
    /// Sample spacing [s]; must equal the plant base step.
    pub dt: f64,
    /// Warm-up length [s]; must be a whole number of samples.
    pub warmup_s: f64,
    /// (speed, fuel demand) per base step, warm-up included.
    pub samples: Vec<OperatingPoint>,
}

impl DriveCycle {
    /// Total length [s].
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.dt
    }

    /// Number of leading samples covered by the warm-up.
    pub fn warmup_steps(&self) -> usize {
        (self.warmup_s / self.dt).round() as usize
    }

    /// Checks the envelope, the warm-up alignment, and that some active
    /// part remains after the warm-up.
    pub fn validate(&self, envelope: &PlantConfig) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CoreError::invalid("drive cycle: dt must be positive"));
        }
        if self.name.trim().is_empty() {
            return Err(CoreError::invalid("drive cycle: empty name"));
        }
        let steps = self.warmup_s / self.dt;
        if !(self.warmup_s >= 0.0 && (steps - steps.round()).abs() < 1e-9) {
            return Err(CoreError::invalid(
                "drive cycle: warm-up must be a whole number of samples",
            ));
        }
        if self.duration_s() <= self.warmup_s || self.warmup_steps() >= self.samples.len() {
            return Err(CoreError::invalid(
                "drive cycle: duration must exceed the warm-up",
            ));
        }
        for (k, s) in self.samples.iter().enumerate() {
            let ok = s.speed_rpm.is_finite()
                && s.fuel_mm3.is_finite()
                && (envelope.speed_min_rpm..=envelope.speed_max_rpm).contains(&s.speed_rpm)
                && (0.0..=envelope.fuel_max_mm3).contains(&s.fuel_mm3);
            if !ok {
                return Err(CoreError::invalid(format!(
                    "drive cycle sample {k} ({:.1} rpm, {:.2} mm3) outside the engine envelope",
                    s.speed_rpm, s.fuel_mm3
                )));
            }
        }
        Ok(())
    }
}

/// Post-warm-up aggregates of one closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Time-integrated NOx over the active part [ppm·s].
    pub cumulative_nox_ppm_s: f64,
    /// Highest NOx sample in the active part [ppm].
    pub peak_nox_ppm: f64,
    /// Mean soot over the active part [%].
    pub average_soot_pct: f64,
    /// Highest soot sample in the active part [%].
    pub peak_soot_pct: f64,
}

/// Computes the aggregates from telemetry, excluding exactly the first
/// `warmup_steps` rows.
pub fn metrics_from_telemetry(
    rows: &[TelemetryRow],
    warmup_steps: usize,
    dt: f64,
) -> Result<Metrics> {
    if warmup_steps >= rows.len() {
        return Err(CoreError::invalid(
            "metrics: no samples left after the warm-up",
        ));
    }
    let active = &rows[warmup_steps..];
    let mut cumulative = 0.0;
    let mut peak_nox = f64::NEG_INFINITY;
    let mut soot_sum = 0.0;
    let mut peak_soot = f64::NEG_INFINITY;
    for r in active {
        cumulative += r.nox_ppm * dt;
        peak_nox = peak_nox.max(r.nox_ppm);
        soot_sum += r.soot_pct;
        peak_soot = peak_soot.max(r.soot_pct);
    }
    Ok(Metrics {
        cumulative_nox_ppm_s: cumulative,
        peak_nox_ppm: peak_nox,
        average_soot_pct: soot_sum / active.len() as f64,
        peak_soot_pct: peak_soot,
    })
}

/// Signed percentage changes against a baseline run of the same cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsDeltas {
    pub cumulative_nox_pct: f64,
    pub peak_nox_pct: f64,
    pub average_soot_pct: f64,
    pub peak_soot_pct: f64,
}

/// `100 · (test − baseline) / baseline`, with a zero baseline mapping to 0
/// (all metrics are nonnegative, so this only happens when both are zero).
pub fn delta_pct(test: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (test - baseline) / baseline
    }
}

impl MetricsDeltas {
    pub fn between(test: &Metrics, baseline: &Metrics) -> Self {
        MetricsDeltas {
            cumulative_nox_pct: delta_pct(test.cumulative_nox_ppm_s, baseline.cumulative_nox_ppm_s),
            peak_nox_pct: delta_pct(test.peak_nox_ppm, baseline.peak_nox_ppm),
            average_soot_pct: delta_pct(test.average_soot_pct, baseline.average_soot_pct),
            peak_soot_pct: delta_pct(test.peak_soot_pct, baseline.peak_soot_pct),
        }
    }
}

/// One scenario's aggregates plus its baseline comparison (absent when no
/// baseline run of the same cycle was available).
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub cycle: String,
    pub scenario: String,
    pub root_seed: u64,
    pub metrics: Metrics,
    pub deltas: Option<MetricsDeltas>,
}

/// A finished closed-loop run: everything needed for metrics and plots.
#[derive(Debug, Clone)]
pub struct CycleRun {
    pub cycle_name: String,
    pub scenario: Scenario,
    pub dt: f64,
    pub warmup_steps: usize,
    pub root_seed: u64,
    /// Soot ceiling in force during the run [%] (drawn on plots only when
    /// the scenario enables the limit).
    pub soot_max_pct: f64,
    pub telemetry: Vec<TelemetryRow>,
}

impl CycleRun {
    pub fn metrics(&self) -> Result<Metrics> {
        metrics_from_telemetry(&self.telemetry, self.warmup_steps, self.dt)
    }

    /// Builds the report row, comparing against `baseline` when given.
    pub fn report(&self, baseline: Option<&Metrics>) -> Result<MetricsReport> {
        let metrics = self.metrics()?;
        Ok(MetricsReport {
            cycle: self.cycle_name.clone(),
            scenario: self.scenario.name.clone(),
            root_seed: self.root_seed,
            metrics,
            deltas: baseline.map(|b| MetricsDeltas::between(&metrics, b)),
        })
    }
}
