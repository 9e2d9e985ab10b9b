//! Full-grid identification driver and trajectory validation of the
//! resulting models against the plant/surrogate composition.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::lpv::fit::{fit_local, ROLLOUT_HORIZON};
use crate::lpv::perturb::{run_perturbation, PerturbationSpec};
use crate::lpv::types::{LpvGridModel, LpvKind, ScheduleGrid};
use crate::nn::MlpModel;
use crate::plant::{ActuatorInput, OperatingPoint, Plant};
use crate::rng::{stream, Stream};

/// Reference calibration EGR valve position [%] held at every grid node.
pub const NOMINAL_EGR_PCT: f64 = 35.0;
/// Reference calibration VGT vane position [%] held at every grid node.
pub const NOMINAL_VGT_PCT: f64 = 55.0;

/// Nominal actuator positions the node experiments are centered on.
pub fn nominal_actuators() -> ActuatorInput {
    ActuatorInput::new(NOMINAL_EGR_PCT, NOMINAL_VGT_PCT)
}

/// Settings for a full-grid identification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentConfig {
    /// Root seed; each node experiment draws from its own derived stream.
    pub seed: u64,
    /// Excitation applied at every node.
    pub perturbation: PerturbationSpec,
    /// Rollout gate horizon [steps].
    pub horizon: usize,
}

impl IdentConfig {
    pub fn new(seed: u64) -> Self {
        IdentConfig {
            seed,
            perturbation: PerturbationSpec::default(),
            horizon: ROLLOUT_HORIZON,
        }
    }
}

/// The two model families identified from one set of node experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvModels {
    /// (NOx, soot) response to (p_im, EGR rate, fuel), normalized.
    pub emissions: LpvGridModel,
    /// (p_im, EGR rate) response to (EGR, VGT) positions plus fuel.
    pub airpath: LpvGridModel,
}

/// Identify both model families over the whole grid.
///
/// Every node runs one perturbation experiment (seeded from its flat
/// index, so node results do not depend on evaluation order) and both
/// families are fitted from the same log. Node equilibria recorded in
/// the logs double as the model's steady-state lookup tables: the
/// airpath nodes carry the calibration actuator positions in `u_ss` and
/// the realized (p_im, EGR rate) equilibria in `x_ss`, which downstream
/// consumers also use as the tracking targets for that node.
pub fn identify_grid(
    plant: &Plant,
    nn: &MlpModel,
    grid: &ScheduleGrid,
    cfg: &IdentConfig,
) -> Result<LpvModels> {
    grid.validate()?;
    cfg.perturbation.validate()?;
    let nominal = nominal_actuators();
    let nodes = grid.nodes();
    let mut emissions = Vec::with_capacity(nodes.len());
    let mut airpath = Vec::with_capacity(nodes.len());
    for (idx, node) in nodes.iter().enumerate() {
        let context = |e: CoreError| {
            CoreError::numerical(format!(
                "node {idx} ({:.0} rpm, {:.1} mm3): {e}",
                node.speed_rpm, node.fuel_mm3
            ))
        };
        let mut rng = stream(cfg.seed, Stream::Perturbation, idx as u64);
        let log =
            run_perturbation(plant, nn, *node, nominal, &cfg.perturbation, &mut rng)
                .map_err(context)?;
        emissions.push(fit_local(&log, LpvKind::Emissions, cfg.horizon).map_err(context)?);
        airpath.push(fit_local(&log, LpvKind::Airpath, cfg.horizon).map_err(context)?);
    }
    Ok(LpvModels {
        emissions: LpvGridModel::new(LpvKind::Emissions, grid.clone(), emissions)?,
        airpath: LpvGridModel::new(LpvKind::Airpath, grid.clone(), airpath)?,
    })
}

/// Steady-state tracking targets (p_im [kPa], EGR rate [-]) at `rho`,
/// read from the airpath model's equilibrium table.
pub fn steady_targets(airpath: &LpvGridModel, rho: OperatingPoint) -> (f64, f64) {
    let local = airpath.interpolate(rho);
    (local.x_ss[0], local.x_ss[1])
}

/// Simulate the emissions model along a schedule, assuming the airpath
/// tracks its steady targets. Inputs at step k are the interpolated
/// targets and the scheduled fuel; the state is renormalized once per
/// step at the current scheduling point. Returns (NOx [ppm], soot [%])
/// per sample; sample 0 is the steady value at the initial point.
pub fn simulate_emissions(models: &LpvModels, schedule: &[OperatingPoint]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(schedule.len());
    if schedule.is_empty() {
        return out;
    }
    let mut x = models.emissions.interpolate(schedule[0]).x_ss.clone();
    out.push([x[0], x[1]]);
    for k in 0..schedule.len() - 1 {
        let rho = schedule[k];
        let local = models.emissions.interpolate(rho);
        let (p_trg, chi_trg) = steady_targets(&models.airpath, rho);
        let u = DVector::from_vec(vec![p_trg, chi_trg, rho.fuel_mm3]);
        let xn = local.normalize_x(&x);
        let un = local.normalize_u(&u);
        let xn_next = local.step_normalized(&xn, &un, 0.0);
        x = local.denormalize_x(&xn_next);
        out.push([x[0], x[1]]);
    }
    out
}

/// Simulate the plant/surrogate composition along the same schedule the
/// emissions model is validated on: the plant runs under the calibration
/// actuator positions for each scheduling point and the surrogate reads
/// the resulting measurements. Returns (NOx [ppm], soot [%]) per sample.
pub fn simulate_reference(
    plant: &Plant,
    nn: &MlpModel,
    models: &LpvModels,
    schedule: &[OperatingPoint],
) -> Result<Vec<[f64; 2]>> {
    let mut out = Vec::with_capacity(schedule.len());
    if schedule.is_empty() {
        return Ok(out);
    }
    let v0 = actuators_at(models, schedule[0]);
    let mut state = plant.equilibrium(v0, schedule[0])?;
    for (k, rho) in schedule.iter().enumerate() {
        let v = actuators_at(models, *rho);
        let em = nn.forward(&plant.measurement_vector(&state, v, *rho))?;
        out.push([em[0], em[1]]);
        if k + 1 < schedule.len() {
            state = plant.step(&state, v, *rho);
        }
    }
    Ok(out)
}

fn actuators_at(models: &LpvModels, rho: OperatingPoint) -> ActuatorInput {
    let local = models.airpath.interpolate(rho);
    ActuatorInput::new(local.u_ss[0], local.u_ss[1])
}

/// Mean and peak absolute differences between the model and reference
/// emission trajectories over a validation schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub samples: usize,
    /// Mean absolute NOx difference [ppm].
    pub mean_abs_nox_ppm: f64,
    /// Peak absolute NOx difference [ppm].
    pub peak_abs_nox_ppm: f64,
    /// Mean absolute soot difference [% opacity].
    pub mean_abs_soot_pct: f64,
    /// Peak absolute soot difference [% opacity].
    pub peak_abs_soot_pct: f64,
}

/// Compare two emission trajectories sample by sample.
pub fn compare_trajectories(model: &[[f64; 2]], reference: &[[f64; 2]]) -> Result<ValidationReport> {
    if model.len() != reference.len() {
        return Err(CoreError::invalid("validation trajectories differ in length"));
    }
    if model.is_empty() {
        return Err(CoreError::invalid("validation trajectories are empty"));
    }
    let mut sum = [0.0; 2];
    let mut peak = [0.0f64; 2];
    for (m, r) in model.iter().zip(reference) {
        for i in 0..2 {
            let d = (m[i] - r[i]).abs();
            sum[i] += d;
            peak[i] = peak[i].max(d);
        }
    }
    let n = model.len() as f64;
    Ok(ValidationReport {
        samples: model.len(),
        mean_abs_nox_ppm: sum[0] / n,
        peak_abs_nox_ppm: peak[0],
        mean_abs_soot_pct: sum[1] / n,
        peak_abs_soot_pct: peak[1],
    })
}

/// Validate the emissions model over a schedule: simulate it and the
/// plant/surrogate reference under the same scheduling trajectory and
/// report the per-output mean and peak absolute differences.
pub fn validate_lpv(
    plant: &Plant,
    nn: &MlpModel,
    models: &LpvModels,
    schedule: &[OperatingPoint],
) -> Result<ValidationReport> {
    let model = simulate_emissions(models, schedule);
    let reference = simulate_reference(plant, nn, models, schedule)?;
    compare_trajectories(&model, &reference)
}
