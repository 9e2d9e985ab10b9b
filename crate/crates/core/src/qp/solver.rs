//! Dual active-set solver for dense convex QPs.
//!
//! The method starts from the unconstrained minimiser of the ridged problem
//! (always dual feasible) and engages violated constraints one at a time,
//! taking the exact primal/dual step that keeps the current active set
//! optimal.  No phase-I feasibility search is needed, every iterate is the
//! exact optimum of an equality-constrained subproblem, and infeasibility
//! surfaces constructively as a Farkas certificate.
//!
//! Determinism: equality rows are engaged in ascending index order, the most
//! violated inequality wins with lowest-index tie-breaking, and blocking
//! constraints are dropped lowest-index-first.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{CoreError, Result};

use super::types::{
    FarkasCertificate, KktResiduals, QpOutcome, QpProblem, QpSolution, QP_MAX_ITERATIONS, QP_RIDGE,
    UNBOUNDED_NORM,
};

/// One engaged constraint: original row index, the sign it was engaged with
/// (−1 for inequalities, ±1 for equalities), its engaged normal
/// `n̂ = sign·row`, the cached solve `D⁻¹ n̂`, and its internal multiplier.
struct Active {
    idx: usize,
    sign: f64,
    normal: DVector<f64>,
    b_hat: f64,
    dinv_normal: DVector<f64>,
    lambda: f64,
}

/// Row `idx` of the stacked constraint system (equalities first).
fn constraint_row(p: &QpProblem, idx: usize) -> (DVector<f64>, f64, bool) {
    let m_eq = p.n_eq();
    if idx < m_eq {
        (p.e_eq().row(idx).transpose(), p.d_eq()[idx], true)
    } else {
        let i = idx - m_eq;
        (p.g_ineq().row(i).transpose(), p.h_ineq()[i], false)
    }
}

/// Signed violation of row `idx` at `w`: `rowᵀw − rhs`.  Positive means an
/// inequality is violated; any nonzero value means an equality is off.
fn violation(p: &QpProblem, idx: usize, w: &DVector<f64>) -> f64 {
    let (row, rhs, _) = constraint_row(p, idx);
    row.dot(w) - rhs
}

fn engagement_tol(rhs: f64) -> f64 {
    1e-9 * (1.0 + rhs.abs())
}

/// Solves the QP.  Malformed problems (already rejected by
/// [`QpProblem::new`]) and internal factorisation failures return `Err`;
/// infeasibility, unboundedness and the iteration cap are reported as
/// [`QpOutcome`] variants.
pub fn solve_qp(p: &QpProblem) -> Result<QpOutcome> {
    let n = p.dim();
    let m_eq = p.n_eq();
    let m_total = m_eq + p.n_ineq();

    // Ridged Hessian D = H + ridge·I, factored once.
    let mut ridged = p.hess().clone();
    for i in 0..n {
        ridged[(i, i)] += QP_RIDGE;
    }
    let chol = Cholesky::new(ridged.clone())
        .ok_or_else(|| CoreError::numerical("qp: ridged hessian is not positive definite"))?;

    // Unconstrained minimiser of the ridged problem.
    let mut w = chol.solve(&(-p.grad()));
    let mut active: Vec<Active> = Vec::new();
    let mut engaged = vec![false; m_total];
    let mut iterations = 0usize;
    let mut refined = false;

    loop {
        // --- select a violated constraint -------------------------------
        let mut pick: Option<usize> = None;
        for idx in 0..m_eq {
            if !engaged[idx] {
                let (_, rhs, _) = constraint_row(p, idx);
                if violation(p, idx, &w).abs() > engagement_tol(rhs) {
                    pick = Some(idx);
                    break;
                }
            }
        }
        if pick.is_none() {
            let mut worst = 0.0f64;
            for idx in m_eq..m_total {
                if engaged[idx] {
                    continue;
                }
                let (_, rhs, _) = constraint_row(p, idx);
                let v = violation(p, idx, &w);
                if v > engagement_tol(rhs) && v > worst {
                    worst = v;
                    pick = Some(idx);
                }
            }
        }

        let Some(p_idx) = pick else {
            // Steps taken from the huge ridge-only start of weakly-curved
            // variables land active constraints with absolute error up to
            // ~norm·ε, so polish the final KKT system before accepting, and
            // rescan in case the polish uncovered a violated row.
            if !refined {
                refine(&chol, &ridged, p.grad(), &mut active, &mut w)?;
                refined = true;
                continue;
            }
            return Ok(finish(p, &ridged, w, &active, iterations));
        };
        refined = false;

        // --- engage constraint p_idx ------------------------------------
        let (row, rhs, is_eq) = constraint_row(p, p_idx);
        // Engagement multiplier s: the internal ≥-form constraint is
        // n̂ᵀw ≥ b̂ with n̂ = s·row, b̂ = s·rhs, chosen so the current slack
        // n̂ᵀw − b̂ is negative.  Inequalities always engage with s = −1.
        let sign = if is_eq && row.dot(&w) - rhs <= 0.0 {
            1.0
        } else {
            -1.0
        };
        let normal = &row * sign;
        let b_hat = rhs * sign;
        let dinv_normal = chol.solve(&normal);
        let mut acc = 0.0f64;

        // Inner loop: alternate dual drops and primal steps until the
        // constraint becomes active or infeasibility is proven.
        loop {
            iterations += 1;
            if iterations > QP_MAX_ITERATIONS {
                return Ok(QpOutcome::IterationLimit { iterations });
            }

            // Directions from the active-set system:
            //   r = (Nᵀ D⁻¹ N)⁻¹ Nᵀ D⁻¹ n̂,   z = D⁻¹ n̂ − D⁻¹ N r.
            let q = active.len();
            let mut r = DVector::zeros(q);
            let mut z = dinv_normal.clone();
            if q > 0 {
                let m = DMatrix::from_fn(q, q, |i, j| active[i].normal.dot(&active[j].dinv_normal));
                let rhs_r = DVector::from_fn(q, |i, _| active[i].normal.dot(&dinv_normal));
                let m = (&m + m.transpose()) * 0.5;
                r = m
                    .lu()
                    .solve(&rhs_r)
                    .ok_or_else(|| CoreError::numerical("qp: active-set system singular"))?;
                for (i, a) in active.iter().enumerate() {
                    z -= &a.dinv_normal * r[i];
                }
            }

            let z_tol = 1e-12 * (1.0 + dinv_normal.amax());
            let denom = normal.dot(&z);
            let slack = normal.dot(&w) - b_hat;

            // Blocking dual step over engaged inequalities with r > 0.
            let mut block: Option<(usize, f64)> = None;
            for (i, a) in active.iter().enumerate() {
                if a.idx >= m_eq && r[i] > 1e-12 {
                    let t = a.lambda / r[i];
                    let better = match block {
                        None => true,
                        Some((bi, tb)) => t < tb || (t == tb && a.idx < active[bi].idx),
                    };
                    if better {
                        block = Some((i, t));
                    }
                }
            }

            if z.amax() <= z_tol || denom <= z_tol {
                // The new normal lies in the span of the active ones: the
                // primal point cannot move.  Either a blocking multiplier
                // can be transferred (dual step) or the system is infeasible.
                let Some((bi, t2)) = block else {
                    let mut y_in = DVector::zeros(p.n_ineq());
                    let mut y_eq = DVector::zeros(m_eq);
                    // Internal identity n̂ₚ = Σ rᵢ n̂ᵢ translates into row
                    // weights yₚ = −signₚ, yᵢ = rᵢ·signᵢ.
                    if is_eq {
                        y_eq[p_idx] = -sign;
                    } else {
                        y_in[p_idx - m_eq] = -sign;
                    }
                    for (i, a) in active.iter().enumerate() {
                        if a.idx < m_eq {
                            y_eq[a.idx] += r[i] * a.sign;
                        } else {
                            y_in[a.idx - m_eq] += r[i] * a.sign;
                        }
                    }
                    return Ok(QpOutcome::Infeasible(FarkasCertificate {
                        ineq_weights: y_in,
                        eq_weights: y_eq,
                    }));
                };
                for (i, a) in active.iter_mut().enumerate() {
                    a.lambda -= t2 * r[i];
                }
                acc += t2;
                engaged[active[bi].idx] = false;
                active.remove(bi);
                continue;
            }

            // Full step length to make the constraint tight, and the dual
            // blocking length; take the smaller.
            let t1 = -slack / denom;
            let t = match block {
                Some((_, t2)) if t2 < t1 => t2,
                _ => t1,
            };
            w += &z * t;
            for (i, a) in active.iter_mut().enumerate() {
                a.lambda -= t * r[i];
            }
            acc += t;

            if let Some((bi, t2)) = block {
                if t2 < t1 {
                    engaged[active[bi].idx] = false;
                    active.remove(bi);
                    continue;
                }
            }
            engaged[p_idx] = true;
            active.push(Active {
                idx: p_idx,
                sign,
                normal: normal.clone(),
                b_hat,
                dinv_normal: dinv_normal.clone(),
                lambda: acc,
            });
            break;
        }
    }
}

/// Iterative refinement of the equality-constrained subproblem defined by
/// the current active set:
///
///   D w − Σ λᵢ n̂ᵢ = −f,   n̂ᵢᵀ w = b̂ᵢ.
///
/// Each pass solves the KKT system for the correction driven by the current
/// residuals; the residuals themselves are small, so the corrections are
/// computed without the cancellation that contaminated the incremental
/// iterates.  Converges linearly at rate ε·κ, so a few passes reach the
/// residual floor.
fn refine(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    ridged: &DMatrix<f64>,
    grad: &DVector<f64>,
    active: &mut [Active],
    w: &mut DVector<f64>,
) -> Result<()> {
    let q = active.len();
    for _ in 0..3 {
        let mut r_stat = -(ridged * &*w) - grad;
        for a in active.iter() {
            r_stat += &a.normal * a.lambda;
        }
        let r_prim = DVector::from_fn(q, |i, _| active[i].b_hat - active[i].normal.dot(w));
        if r_stat.amax() <= 1e-13 && (q == 0 || r_prim.amax() <= 1e-13) {
            break;
        }
        let dinv_rstat = chol.solve(&r_stat);
        let mut dw = dinv_rstat.clone();
        if q > 0 {
            let m = DMatrix::from_fn(q, q, |i, j| active[i].normal.dot(&active[j].dinv_normal));
            let m = (&m + m.transpose()) * 0.5;
            let rhs = DVector::from_fn(q, |i, _| r_prim[i] - active[i].normal.dot(&dinv_rstat));
            let dlambda = m
                .lu()
                .solve(&rhs)
                .ok_or_else(|| CoreError::numerical("qp: refinement system singular"))?;
            let mut n_dl = DVector::zeros(w.len());
            for (i, a) in active.iter().enumerate() {
                n_dl += &a.normal * dlambda[i];
            }
            dw = chol.solve(&(&r_stat + n_dl));
            for (i, a) in active.iter_mut().enumerate() {
                a.lambda += dlambda[i];
            }
        }
        *w += dw;
    }
    Ok(())
}

/// Assembles the solution struct once no constraint is violated.
fn finish(
    p: &QpProblem,
    ridged: &DMatrix<f64>,
    w: DVector<f64>,
    active: &[Active],
    iterations: usize,
) -> QpOutcome {
    let norm = w.amax();
    if norm > UNBOUNDED_NORM {
        return QpOutcome::Unbounded { norm };
    }

    // Original-form multipliers: the internal stationarity identity is
    // D w + f = Σ λᵢ n̂ᵢ with n̂ᵢ = signᵢ·(−rowᵢ), hence the multiplier on
    // rowᵢ is −λᵢ·signᵢ (non-negative for inequalities, where sign = −1).
    let mut ineq_duals = DVector::zeros(p.n_ineq());
    let mut eq_duals = DVector::zeros(p.n_eq());
    for a in active {
        let mult = -a.lambda * a.sign;
        if a.idx < p.n_eq() {
            eq_duals[a.idx] = mult;
        } else {
            ineq_duals[a.idx - p.n_eq()] = mult;
        }
    }

    let mut stat = ridged * &w + p.grad();
    if p.n_ineq() > 0 {
        stat += p.g_ineq().transpose() * &ineq_duals;
    }
    if p.n_eq() > 0 {
        stat += p.e_eq().transpose() * &eq_duals;
    }
    let mut primal_in = 0.0f64;
    let mut compl = 0.0f64;
    for i in 0..p.n_ineq() {
        let s = p.g_ineq().row(i).transpose().dot(&w) - p.h_ineq()[i];
        primal_in = primal_in.max(s);
        compl = compl.max((ineq_duals[i] * s).abs());
    }
    let mut primal_eq = 0.0f64;
    for i in 0..p.n_eq() {
        let s = p.e_eq().row(i).transpose().dot(&w) - p.d_eq()[i];
        primal_eq = primal_eq.max(s.abs());
    }

    QpOutcome::Optimal(QpSolution {
        w,
        ineq_duals,
        eq_duals,
        iterations,
        kkt: KktResiduals {
            stationarity: stat.amax(),
            primal_inequality: primal_in.max(0.0),
            primal_equality: primal_eq,
            complementarity: compl,
        },
    })
}
