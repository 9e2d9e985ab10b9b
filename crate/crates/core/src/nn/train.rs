//! From-scratch training: backpropagation of the batch-mean squared error
//! and stochastic gradient descent with momentum under a stepped
//! learning-rate schedule.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Sample, SampleKind, SplitDataset};
use crate::error::{CoreError, Result};
use crate::rng::{stream, Stream};

use super::model::{MlpModel, Standardizer, DEFAULT_WIDTHS};

/// Training hyperparameters. Defaults follow the reference recipe: 1000
/// epochs of batch-40 SGD, momentum 0.9, initial rate 1e-4 halved every
/// 100 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    /// Multiplicative decay applied to the learning rate every
    /// `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            widths: DEFAULT_WIDTHS.to_vec(),
            epochs: 1000,
            batch_size: 40,
            lr0: 1e-4,
            momentum: 0.9,
            decay: 0.5,
            decay_every: 100,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(CoreError::invalid("widths must list >= 2 nonzero layers"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 {
            return Err(CoreError::invalid(
                "epochs, batch size, decay interval must be > 0",
            ));
        }
        if self.lr0 <= 0.0 || !(0.0..1.0).contains(&self.momentum) {
            return Err(CoreError::invalid("need lr0 > 0 and momentum in [0, 1)"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(CoreError::invalid("decay must be in (0, 1]"));
        }
        Ok(())
    }

    /// Learning rate in force at a given epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Gradient of the loss with respect to every parameter, shaped like the
/// model.
pub struct ParamGrad {
    pub dw: Vec<DMatrix<f64>>,
    pub db: Vec<DVector<f64>>,
}

/// Batch-mean squared error (mean over batch *and* output coordinates) of
/// the scaled-space predictions, plus its gradient via backpropagation.
/// The relu subgradient at exactly zero is taken as zero.
pub fn loss_and_grad(model: &MlpModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> (f64, ParamGrad) {
    let batch = x.ncols();
    assert!(batch > 0, "empty batch");
    let n_layers = model.weights.len();
    // Forward, keeping every activation (a[0] = input).
    let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers + 1);
    acts.push(x.clone());
    for (w, b) in model.weights.iter().zip(&model.biases) {
        let mut z = w * acts.last().unwrap();
        for mut col in z.column_iter_mut() {
            col += b;
        }
        for v in z.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        acts.push(z);
    }
    let y = acts.last().unwrap();
    let resid = y - t;
    let denom = (batch * model.n_outputs()) as f64;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / denom;

    // Backward. delta = dL/dz for the current layer.
    let mut delta = resid * (2.0 / denom);
    let mut dw = vec![DMatrix::zeros(0, 0); n_layers];
    let mut db = vec![DVector::zeros(0); n_layers];
    for i in (0..n_layers).rev() {
        // Mask by this layer's own activation: relu output is positive
        // exactly where the pre-activation was.
        let a_out = &acts[i + 1];
        for (d, a) in delta.iter_mut().zip(a_out.iter()) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        dw[i] = &delta * acts[i].transpose();
        db[i] = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
        if i > 0 {
            delta = model.weights[i].transpose() * delta;
        }
    }
    (loss, ParamGrad { dw, db })
}

/// Per-run record: losses per epoch, the schedule actually used, the
/// best-validation epoch the returned snapshot comes from, and test-set
/// mean absolute errors per target and sample kind (physical units).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation loss of the freshly initialized model, before the first
    /// parameter update — the baseline for improvement ratios.
    pub initial_validation_loss: f64,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub test_mae: TestMae,
}

/// Mean absolute error on the test partition, split by sample kind.
/// `None` when the partition holds no samples of that kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestMae {
    pub nox_transient: Option<f64>,
    pub nox_steady: Option<f64>,
    pub soot_transient: Option<f64>,
    pub soot_steady: Option<f64>,
}

fn batch_matrices(samples: &[&Sample], norm: &Standardizer) -> (DMatrix<f64>, DMatrix<f64>) {
    let n_in = samples[0].inputs.len();
    let x = DMatrix::from_fn(n_in, samples.len(), |r, c| {
        (samples[c].inputs[r] - norm.in_mean[r]) / norm.in_std[r]
    });
    let t = DMatrix::from_fn(2, samples.len(), |r, c| {
        samples[c].targets[r] / norm.out_scale[r]
    });
    (x, t)
}

fn dataset_loss(model: &MlpModel, x: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let y = model.forward_scaled(x);
    let resid = y - t;
    resid.iter().map(|r| r * r).sum::<f64>() / (x.ncols() * t.nrows()) as f64
}

/// Train a network on the split dataset and return the parameters from the
/// epoch with the lowest validation loss.
///
/// Update rule per batch: `velocity = momentum * velocity - lr * grad`,
/// `param += velocity`. Batches are drawn in a freshly seeded shuffled
/// order each epoch; a trailing partial batch is kept. Errors out with the
/// epoch index if the loss stops being finite.
pub fn train(data: &SplitDataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if data.train.samples.is_empty() {
        return Err(CoreError::invalid("training partition is empty"));
    }
    if data.train.columns.len() != cfg.widths[0] {
        return Err(CoreError::invalid(format!(
            "dataset has {} input columns but the model expects {}",
            data.train.columns.len(),
            cfg.widths[0]
        )));
    }
    let inputs: Vec<Vec<f64>> = data
        .train
        .samples
        .iter()
        .map(|s| s.inputs.clone())
        .collect();
    let targets: Vec<[f64; 2]> = data.train.samples.iter().map(|s| s.targets).collect();
    let norm = Standardizer::fit(&inputs, &targets)?;

    let mut model = MlpModel::new_random(&cfg.widths, &mut stream(cfg.seed, Stream::NnInit, 0))?;
    model.norm = norm.clone();

    let train_refs: Vec<&Sample> = data.train.samples.iter().collect();
    let val_refs: Vec<&Sample> = data.validation.samples.iter().collect();
    let (val_x, val_t) = if val_refs.is_empty() {
        (DMatrix::zeros(cfg.widths[0], 0), DMatrix::zeros(2, 0))
    } else {
        batch_matrices(&val_refs, &norm)
    };

    let mut velocity_w: Vec<DMatrix<f64>> = model
        .weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();
    let mut velocity_b: Vec<DVector<f64>> = model
        .biases
        .iter()
        .map(|b| DVector::zeros(b.len()))
        .collect();

    let initial_validation_loss = if val_refs.is_empty() {
        let (x, t) = batch_matrices(&train_refs, &norm);
        dataset_loss(&model, &x, &t)
    } else {
        dataset_loss(&model, &val_x, &val_t)
    };
    let mut report = TrainReport {
        initial_validation_loss,
        train_loss: Vec::with_capacity(cfg.epochs),
        validation_loss: Vec::with_capacity(cfg.epochs),
        learning_rate: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        test_mae: TestMae {
            nox_transient: None,
            nox_steady: None,
            soot_transient: None,
            soot_steady: None,
        },
    };
    let mut best: Option<MlpModel> = None;
    let mut order: Vec<usize> = (0..train_refs.len()).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut stream(cfg.seed, Stream::NnBatches, epoch as u64));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| train_refs[i]).collect();
            let (x, t) = batch_matrices(&batch, &norm);
            let (loss, grad) = loss_and_grad(&model, &x, &t);
            epoch_loss += loss * chunk.len() as f64;
            for i in 0..model.weights.len() {
                velocity_w[i] = &velocity_w[i] * cfg.momentum - &grad.dw[i] * lr;
                model.weights[i] += &velocity_w[i];
                velocity_b[i] = &velocity_b[i] * cfg.momentum - &grad.db[i] * lr;
                model.biases[i] += &velocity_b[i];
            }
        }
        epoch_loss /= train_refs.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(CoreError::numerical(format!(
                "training diverged at epoch {epoch}: loss is not finite"
            )));
        }
        let val_loss = if val_refs.is_empty() {
            epoch_loss
        } else {
            dataset_loss(&model, &val_x, &val_t)
        };
        if !val_loss.is_finite() {
            return Err(CoreError::numerical(format!(
                "training diverged at epoch {epoch}: validation loss is not finite"
            )));
        }
        report.train_loss.push(epoch_loss);
        report.validation_loss.push(val_loss);
        report.learning_rate.push(lr);
        if val_loss < report.best_validation_loss {
            report.best_validation_loss = val_loss;
            report.best_epoch = epoch;
            best = Some(model.clone());
        }
    }
    let model = best.expect("at least one epoch ran");

    // Test-set mean absolute errors in physical units, per sample kind.
    let mut acc = [[0.0f64; 2]; 2];
    let mut cnt = [0usize; 2];
    for s in &data.test.samples {
        let pred = model.forward(&s.inputs)?;
        let k = usize::from(s.kind == SampleKind::Steady);
        acc[k][0] += (pred[0] - s.targets[0]).abs();
        acc[k][1] += (pred[1] - s.targets[1]).abs();
        cnt[k] += 1;
    }
    let mae = |k: usize, t: usize| (cnt[k] > 0).then(|| acc[k][t] / cnt[k] as f64);
    report.test_mae = TestMae {
        nox_transient: mae(0, 0),
        nox_steady: mae(1, 0),
        soot_transient: mae(0, 1),
        soot_steady: mae(1, 1),
    };
    Ok((model, report))
}
