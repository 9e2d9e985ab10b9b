//! Dataset preparation: input-channel screening, outlier rejection,
//! steady-state rebalancing, and the train/validation/test split.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CoreError, Result};

use super::stats::{normalized_xcov, percentile, DatasetStats};
use super::types::{Dataset, Sample, SampleKind, SplitDataset, SPLIT_RATIOS};

/// Default screening threshold on |correlation|: a channel must clear it
/// against at least one target in at least one dataset to be kept.
pub const SELECT_THRESHOLD: f64 = 0.05;

/// Steady-state samples are duplicated this many times in the training
/// partition to offset the transient log's much larger sample count.
pub const STEADY_DUPLICATION: usize = 7;

/// Percentile of steady-state self-distances used as the default outlier
/// cutoff for transient samples.
pub const OUTLIER_PERCENTILE: f64 = 97.5;

/// Correlation of one candidate channel against both targets in both
/// datasets. `None` marks a constant channel (correlation undefined).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ChannelScreen {
    pub name: String,
    pub steady_nox: Option<f64>,
    pub steady_soot: Option<f64>,
    pub transient_nox: Option<f64>,
    pub transient_soot: Option<f64>,
    pub retained: bool,
}

impl ChannelScreen {
    fn max_abs(&self) -> f64 {
        [
            self.steady_nox,
            self.steady_soot,
            self.transient_nox,
            self.transient_soot,
        ]
        .iter()
        .flatten()
        .fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

/// Outcome of input screening: retained column names plus the full
/// correlation table for reporting.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Selection {
    pub retained: Vec<String>,
    pub dropped: Vec<String>,
    pub table: Vec<ChannelScreen>,
}

/// Correlation that treats a constant channel as carrying no information
/// rather than failing the whole screen.
fn screen_xcov(channel: &[f64], target: &[f64]) -> Result<Option<f64>> {
    match normalized_xcov(channel, target) {
        Ok(v) => Ok(Some(v)),
        Err(CoreError::Numerical(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Drop candidate channels whose |correlation| with **both** targets stays
/// below `threshold` in **both** the steady-state and transient datasets.
///
/// Both datasets must share the same column list. Errors if `threshold <= 0`
/// or if either target series is constant.
pub fn select_inputs(steady: &Dataset, transient: &Dataset, threshold: f64) -> Result<Selection> {
    if threshold <= 0.0 {
        return Err(CoreError::invalid("selection threshold must be > 0"));
    }
    if steady.columns != transient.columns {
        return Err(CoreError::invalid(
            "steady and transient datasets disagree on columns",
        ));
    }
    if steady.columns.is_empty() {
        return Err(CoreError::invalid("no candidate channels"));
    }
    for (ds, label) in [(steady, "steady"), (transient, "transient")] {
        for t in 0..2 {
            let series = ds.target(t);
            if normalized_xcov(&series, &series).is_err() {
                return Err(CoreError::numerical(format!(
                    "{label} target {t} is constant; cannot screen channels"
                )));
            }
        }
    }
    let steady_nox = steady.target(0);
    let steady_soot = steady.target(1);
    let transient_nox = transient.target(0);
    let transient_soot = transient.target(1);
    let mut table = Vec::with_capacity(steady.columns.len());
    for (idx, name) in steady.columns.iter().enumerate() {
        let s_col = steady.column(idx);
        let t_col = transient.column(idx);
        let mut row = ChannelScreen {
            name: name.clone(),
            steady_nox: screen_xcov(&s_col, &steady_nox)?,
            steady_soot: screen_xcov(&s_col, &steady_soot)?,
            transient_nox: screen_xcov(&t_col, &transient_nox)?,
            transient_soot: screen_xcov(&t_col, &transient_soot)?,
            retained: false,
        };
        row.retained = row.max_abs() >= threshold;
        table.push(row);
    }
    let retained = table
        .iter()
        .filter(|r| r.retained)
        .map(|r| r.name.clone())
        .collect();
    let dropped = table
        .iter()
        .filter(|r| !r.retained)
        .map(|r| r.name.clone())
        .collect();
    Ok(Selection {
        retained,
        dropped,
        table,
    })
}

/// Keep only samples whose Mahalanobis distance from the steady-state
/// distribution is at most `epsilon`. Returns the retained samples and the
/// number removed.
pub fn filter_outliers(
    transient: &[Sample],
    stats: &DatasetStats,
    epsilon: f64,
) -> Result<(Vec<Sample>, usize)> {
    if epsilon < 0.0 {
        return Err(CoreError::invalid("outlier threshold must be >= 0"));
    }
    let factor = stats.factor()?;
    let mut kept = Vec::with_capacity(transient.len());
    for s in transient {
        if factor.distance(&s.inputs)? <= epsilon {
            kept.push(s.clone());
        }
    }
    let removed = transient.len() - kept.len();
    Ok((kept, removed))
}

/// Default outlier cutoff: the [`OUTLIER_PERCENTILE`] of the steady-state
/// samples' own distances from their fitted distribution.
pub fn steady_self_distance_cutoff(steady: &Dataset, stats: &DatasetStats) -> Result<f64> {
    let factor = stats.factor()?;
    let dists: Vec<f64> = steady
        .samples
        .iter()
        .map(|s| factor.distance(&s.inputs))
        .collect::<Result<_>>()?;
    percentile(&dists, OUTLIER_PERCENTILE)
}

/// Rebalance: transient samples followed by [`STEADY_DUPLICATION`] full
/// copies of the steady-state block. Order is deterministic; shuffling is
/// the trainer's job.
pub fn balance(steady: &[Sample], transient_filtered: &[Sample]) -> Vec<Sample> {
    let mut out = Vec::with_capacity(transient_filtered.len() + STEADY_DUPLICATION * steady.len());
    out.extend_from_slice(transient_filtered);
    for _ in 0..STEADY_DUPLICATION {
        out.extend_from_slice(steady);
    }
    out
}

/// Seeded-shuffle split into train/validation/test. Sizes are
/// `floor(0.70 n)` and `floor(0.15 n)` with the remainder going to test, so
/// every partition is within one sample of its exact share.
pub fn split<R: Rng>(dataset: &Dataset, rng: &mut R) -> Result<SplitDataset> {
    let n = dataset.samples.len();
    if n == 0 {
        return Err(CoreError::invalid("cannot split an empty dataset"));
    }
    let (r_train, r_val, r_test) = SPLIT_RATIOS;
    debug_assert!((r_train + r_val + r_test - 1.0).abs() < 1e-12);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (r_train * n as f64).floor() as usize;
    let n_val = (r_val * n as f64).floor() as usize;
    let take = |range: std::ops::Range<usize>| -> Dataset {
        Dataset {
            columns: dataset.columns.clone(),
            samples: range.map(|i| dataset.samples[order[i]].clone()).collect(),
        }
    };
    Ok(SplitDataset {
        train: take(0..n_train),
        validation: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}

/// Everything `prepare` produces besides the split itself, for the sidecar
/// report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PrepareReport {
    pub selection: Selection,
    pub stats: DatasetStats,
    pub epsilon: f64,
    pub transient_removed: usize,
    pub steady_count: usize,
    pub transient_count: usize,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
}

/// Full preparation pipeline: screen channels, fit steady statistics,
/// reject transient outliers, split 70/15/15, then duplicate the training
/// partition's steady samples sevenfold.
///
/// Duplication happens **after** the split and only inside the training
/// partition, so no steady point leaks across partitions.
pub fn prepare<R: Rng>(
    steady: &Dataset,
    transient: &Dataset,
    threshold: f64,
    epsilon_override: Option<f64>,
    rng: &mut R,
) -> Result<(SplitDataset, PrepareReport)> {
    steady.validate()?;
    transient.validate()?;
    let selection = select_inputs(steady, transient, threshold)?;
    let steady_sel = steady.with_columns(&selection.retained)?;
    let transient_sel = transient.with_columns(&selection.retained)?;
    let stats = DatasetStats::from_rows(&steady_sel.input_rows())?;
    let epsilon = match epsilon_override {
        Some(e) => e,
        None => steady_self_distance_cutoff(&steady_sel, &stats)?,
    };
    let (kept, transient_removed) = filter_outliers(&transient_sel.samples, &stats, epsilon)?;

    let mut pool = Dataset::new(selection.retained.clone());
    pool.samples.extend(steady_sel.samples.iter().cloned());
    pool.samples.extend(kept);
    let mut parts = split(&pool, rng)?;

    let (train_steady, train_transient): (Vec<Sample>, Vec<Sample>) = parts
        .train
        .samples
        .iter()
        .cloned()
        .partition(|s| s.kind == SampleKind::Steady);
    parts.train.samples = balance(&train_steady, &train_transient);

    let report = PrepareReport {
        selection,
        stats,
        epsilon,
        transient_removed,
        steady_count: steady.samples.len(),
        transient_count: transient.samples.len(),
        train_count: parts.train.samples.len(),
        validation_count: parts.validation.samples.len(),
        test_count: parts.test.samples.len(),
    };
    Ok((parts, report))
}
