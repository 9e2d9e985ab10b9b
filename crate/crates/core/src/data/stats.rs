//! Statistics helpers for the dataset pipeline: correlation-based input
//! screening and Mahalanobis distances for outlier rejection.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{CoreError, Result};

/// Ridge factor applied to the covariance before inversion, scaled by the
/// mean diagonal magnitude (`trace / dim`).
const COV_RIDGE: f64 = 1e-8;

/// Zero-lag cross-covariance of two equal-length series, normalized by the
/// product of their standard deviations (Pearson correlation).
///
/// Errors if the series differ in length, are shorter than 2 samples, or if
/// either one is constant (zero variance makes the ratio undefined).
pub fn normalized_xcov(signal_a: &[f64], signal_b: &[f64]) -> Result<f64> {
    if signal_a.len() != signal_b.len() {
        return Err(CoreError::invalid(format!(
            "series length mismatch: {} vs {}",
            signal_a.len(),
            signal_b.len()
        )));
    }
    let n = signal_a.len();
    if n < 2 {
        return Err(CoreError::invalid("need at least 2 samples"));
    }
    let mean_a = signal_a.iter().sum::<f64>() / n as f64;
    let mean_b = signal_b.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for i in 0..n {
        let da = signal_a[i] - mean_a;
        let db = signal_b[i] - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    let denom = (var_a * var_b).sqrt();
    if denom == 0.0 {
        return Err(CoreError::numerical(
            "constant signal: zero variance in cross-covariance",
        ));
    }
    Ok((cov / denom).clamp(-1.0, 1.0))
}

/// Sample mean and covariance (divisor `n - 1`) of a set of equal-length
/// vectors, used as the reference distribution for Mahalanobis distances.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetStats {
    /// Per-column mean of the reference (steady-state) inputs.
    pub mean: Vec<f64>,
    /// Sample covariance of the reference inputs, row-major `dim x dim`.
    pub covariance: Vec<Vec<f64>>,
}

impl DatasetStats {
    /// Estimate mean and sample covariance from row vectors.
    ///
    /// Errors on fewer than 2 rows or inconsistent widths.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(CoreError::invalid("need at least 2 rows for covariance"));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(CoreError::invalid("inconsistent row widths"));
        }
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut covariance = vec![vec![0.0; dim]; dim];
        for row in rows {
            let d: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..dim {
                for j in 0..dim {
                    covariance[i][j] += d[i] * d[j];
                }
            }
        }
        let denom = (n - 1) as f64;
        for r in &mut covariance {
            for v in r.iter_mut() {
                *v /= denom;
            }
        }
        Ok(Self { mean, covariance })
    }

    /// Input dimension.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn regularized(&self) -> DMatrix<f64> {
        let dim = self.dim();
        let mut sigma = DMatrix::from_fn(dim, dim, |i, j| self.covariance[i][j]);
        let trace: f64 = (0..dim).map(|i| sigma[(i, i)]).sum();
        let ridge = COV_RIDGE * trace / dim as f64;
        for i in 0..dim {
            sigma[(i, i)] += ridge;
        }
        sigma
    }

    /// Cholesky factor of the ridge-regularized covariance, reusable across
    /// many distance evaluations.
    pub fn factor(&self) -> Result<MahalanobisFactor> {
        let sigma = self.regularized();
        let chol = Cholesky::new(sigma).ok_or_else(|| {
            CoreError::numerical("covariance not positive definite after regularization")
        })?;
        Ok(MahalanobisFactor {
            mean: DVector::from_column_slice(&self.mean),
            chol,
        })
    }
}

/// Pre-factorized reference distribution for repeated distance queries.
pub struct MahalanobisFactor {
    mean: DVector<f64>,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl MahalanobisFactor {
    /// Mahalanobis distance `sqrt((y - mu)^T Sigma^-1 (y - mu))`.
    pub fn distance(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.mean.len() {
            return Err(CoreError::invalid(format!(
                "vector dim {} does not match stats dim {}",
                y.len(),
                self.mean.len()
            )));
        }
        let d = DVector::from_column_slice(y) - &self.mean;
        let solved = self.chol.solve(&d);
        let r2 = d.dot(&solved);
        Ok(r2.max(0.0).sqrt())
    }
}

/// Mahalanobis distance of a single vector; convenience wrapper that
/// factorizes per call (use [`DatasetStats::factor`] in loops).
pub fn mahalanobis(y: &[f64], stats: &DatasetStats) -> Result<f64> {
    stats.factor()?.distance(y)
}

/// Percentile of a sample by linear interpolation between order statistics
/// (the convention used by most numeric libraries). `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(CoreError::invalid("percentile of empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(CoreError::invalid("percentile must be in [0, 100]"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-finite value in percentile"));
    let idx = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    let frac = idx - lo as f64;
    Ok(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}
