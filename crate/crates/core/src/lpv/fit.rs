//! One-step least-squares identification of a local model from a node
//! experiment log, with a multi-step rollout quality gate and a spectral
//! projection that keeps every stored model stable.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{CoreError, Result};
use crate::lpv::perturb::ExperimentLog;
use crate::lpv::types::{spectral_radius, LocalModel, LpvKind};

/// Default evaluation horizon [steps] for the rollout gate.
pub const ROLLOUT_HORIZON: usize = 50;
/// Fits whose relative rollout error exceeds this are rejected.
pub const ROLLOUT_ERROR_LIMIT: f64 = 0.5;
/// Spectral radius that unstable fits are scaled down to.
pub const SPECTRAL_RADIUS_LIMIT: f64 = 0.999;
/// Required one-step pairs per identified parameter.
pub const MIN_ROWS_PER_PARAM: usize = 10;

/// Population mean and standard deviation of a series.
fn mean_std(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// A series is treated as unexcited when its spread is negligible
/// relative to its reference level.
fn excitation_floor(reference: f64) -> f64 {
    1e-9 * (1.0 + reference.abs())
}

/// Fit one local model of the given kind from a node log.
///
/// The fit minimizes the one-step-ahead squared error of the deviation
/// dynamics (normalized per channel for kinds that use normalized
/// coordinates). The state matrix is scaled down to spectral radius
/// [`SPECTRAL_RADIUS_LIMIT`] if the raw fit is unstable, and the model
/// as stored is then evaluated on `horizon`-step open-loop rollouts over
/// the same log. If the relative rollout error exceeds
/// [`ROLLOUT_ERROR_LIMIT`], the fit is refined to a static input-only
/// model (A = 0) and re-evaluated; failing that too is an error.
///
/// Output channels with no visible excitation are pinned: their rows and
/// columns are zero, so the model holds them at the equilibrium value.
/// Input channels with no excitation are an error, since their columns
/// make the regressor rank deficient.
pub fn fit_local(log: &ExperimentLog, kind: LpvKind, horizon: usize) -> Result<LocalModel> {
    log.validate()?;
    if horizon == 0 {
        return Err(CoreError::invalid("rollout horizon must be at least 1"));
    }

    // Column views and equilibrium levels for the requested model family.
    let (outputs, x_ss, inputs, u_ss): (Vec<&[f64]>, Vec<f64>, Vec<&[f64]>, Vec<f64>) = match kind
    {
        LpvKind::Emissions => (
            vec![&log.nox, &log.soot],
            vec![log.eq_nox, log.eq_soot],
            vec![&log.p_im, &log.chi_egr, &log.w_inj],
            vec![log.eq_p_im, log.eq_chi, log.rho.fuel_mm3],
        ),
        LpvKind::Airpath => (
            vec![&log.p_im, &log.chi_egr],
            vec![log.eq_p_im, log.eq_chi],
            vec![&log.egr_pos, &log.vgt_pos],
            vec![log.nominal.egr_pos, log.nominal.vgt_pos],
        ),
    };
    let fuel_col: Option<(&[f64], f64)> = kind
        .has_fuel_column()
        .then_some((log.w_inj.as_slice(), log.rho.fuel_mm3));

    let n = outputs.len();
    let m = inputs.len();
    let n_fuel = usize::from(fuel_col.is_some());
    let samples = log.len();
    if samples < 2 {
        return Err(CoreError::invalid("experiment log too short to form pairs"));
    }
    let pairs = samples - 1;
    let param_count = n * (n + m + n_fuel);
    if pairs < MIN_ROWS_PER_PARAM * param_count {
        return Err(CoreError::invalid(format!(
            "log provides {pairs} one-step pairs; need at least {} for {param_count} parameters",
            MIN_ROWS_PER_PARAM * param_count
        )));
    }

    // Input channels must all be excited; a constant column cannot be
    // identified and would make the regressor singular.
    for (j, col) in inputs.iter().enumerate() {
        let (_, std) = mean_std(col);
        if std < excitation_floor(u_ss[j]) {
            return Err(CoreError::invalid(format!(
                "input channel {} has no excitation (rank-deficient regressor)",
                kind.input_names()[j]
            )));
        }
    }
    if let Some((col, w_ss)) = fuel_col {
        let (_, std) = mean_std(col);
        if std < excitation_floor(w_ss) {
            return Err(CoreError::invalid(
                "input channel w_inj has no excitation (rank-deficient regressor)",
            ));
        }
    }

    // Unexcited outputs are pinned at equilibrium rather than fitted.
    let normalized = kind.normalized_coordinates();
    let mut active = Vec::new();
    let mut sigma_x = DVector::from_element(n, 1.0);
    for (i, col) in outputs.iter().enumerate() {
        let (_, std) = mean_std(col);
        if std >= excitation_floor(x_ss[i]) {
            active.push(i);
            if normalized {
                sigma_x[i] = std;
            }
        }
    }
    let mut sigma_u = DVector::from_element(m, 1.0);
    if normalized {
        for (j, col) in inputs.iter().enumerate() {
            let (_, std) = mean_std(col);
            sigma_u[j] = std;
        }
    }

    // Normalized deviation series. Pinned outputs read exactly zero.
    let xt = |k: usize, i: usize| -> f64 {
        if active.contains(&i) {
            (outputs[i][k] - x_ss[i]) / sigma_x[i]
        } else {
            0.0
        }
    };
    let ut = |k: usize, j: usize| -> f64 { (inputs[j][k] - u_ss[j]) / sigma_u[j] };
    let wt = |k: usize| -> f64 {
        fuel_col
            .map(|(col, w_ss)| col[k] - w_ss)
            .unwrap_or(0.0)
    };

    // One-step least squares with or without the state columns. Returns
    // the assembled full-size matrices; pinned state rows/columns stay
    // zero, as does A for the static (input-only) variant.
    let solve_fit = |with_states: bool| -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DMatrix::<f64>::zeros(n, m);
        let mut bf_vec = DVector::<f64>::zeros(n);
        if active.is_empty() {
            return Ok((a, b, bf_vec));
        }
        let n_state_cols = if with_states { active.len() } else { 0 };
        let p_cols = n_state_cols + m + n_fuel;
        let mut regressor = DMatrix::<f64>::zeros(pairs, p_cols);
        let mut targets = DMatrix::<f64>::zeros(pairs, active.len());
        for k in 0..pairs {
            for (c, &i) in active.iter().enumerate() {
                if with_states {
                    regressor[(k, c)] = xt(k, i);
                }
                targets[(k, c)] = xt(k + 1, i);
            }
            for j in 0..m {
                regressor[(k, n_state_cols + j)] = ut(k, j);
            }
            if n_fuel == 1 {
                regressor[(k, p_cols - 1)] = wt(k);
            }
        }
        let svd = SVD::new(regressor, true, true);
        let s_max = svd.singular_values.max();
        let s_min = svd.singular_values.min();
        if !(s_max > 0.0) || s_min / s_max < 1e-10 {
            return Err(CoreError::invalid(
                "regressor is rank deficient (collinear channels)",
            ));
        }
        let theta = svd.solve(&targets, 1e-12).map_err(CoreError::numerical)?;
        for (c, &i) in active.iter().enumerate() {
            if with_states {
                for (cc, &ii) in active.iter().enumerate() {
                    a[(i, ii)] = theta[(cc, c)];
                }
            }
            for j in 0..m {
                b[(i, j)] = theta[(n_state_cols + j, c)];
            }
            if n_fuel == 1 {
                bf_vec[i] = theta[(p_cols - 1, c)];
            }
        }
        Ok((a, b, bf_vec))
    };

    // Relative open-loop rollout error over consecutive log windows.
    let rollout_error = |a: &DMatrix<f64>, b: &DMatrix<f64>, bf_vec: &DVector<f64>| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut k0 = 0;
        while k0 < pairs {
            let mut sim = DVector::from_fn(n, |i, _| xt(k0, i));
            let end = (k0 + horizon).min(pairs);
            for k in k0..end {
                let u_k = DVector::from_fn(m, |j, _| ut(k, j));
                sim = a * &sim + b * &u_k + bf_vec * wt(k);
                let target = DVector::from_fn(n, |i, _| xt(k + 1, i));
                num += (&sim - &target).norm_squared();
                den += target.norm_squared();
            }
            k0 = end;
        }
        if den > 1e-18 {
            (num / den).sqrt()
        } else {
            0.0
        }
    };

    // Stability projection: uniform eigenvalue scaling.
    let project = |a: &mut DMatrix<f64>| {
        let rho = spectral_radius(a);
        if rho > SPECTRAL_RADIUS_LIMIT {
            *a *= SPECTRAL_RADIUS_LIMIT / rho;
        }
    };

    // Fit the full dynamic model first; judge the model as stored (after
    // projection). When the surrogate response is almost purely static,
    // the state and input columns are nearly collinear and the dynamic
    // fit can be junk — fall back to a static refit (A = 0) before
    // giving up.
    let (mut a, b, bf_vec) = solve_fit(true)?;
    project(&mut a);
    let dynamic_error = rollout_error(&a, &b, &bf_vec);
    let (a, b, bf_vec) = if dynamic_error <= ROLLOUT_ERROR_LIMIT {
        (a, b, bf_vec)
    } else {
        let (a0, b0, bf0) = solve_fit(false)?;
        let static_error = rollout_error(&a0, &b0, &bf0);
        if static_error > ROLLOUT_ERROR_LIMIT {
            return Err(CoreError::numerical(format!(
                "{horizon}-step rollout error exceeds limit {ROLLOUT_ERROR_LIMIT}: \
                 {dynamic_error:.3} for the dynamic fit, {static_error:.3} for the static refit"
            )));
        }
        (a0, b0, bf0)
    };

    let model = LocalModel {
        a,
        b,
        bf: kind.has_fuel_column().then_some(bf_vec),
        x_ss: DVector::from_vec(x_ss),
        u_ss: DVector::from_vec(u_ss),
        sigma_x,
        sigma_u,
    };
    model.validate()?;
    Ok(model)
}
