//! Feed-forward emissions model: a four-layer rectified-linear network
//! mapping the ten sensor channels to NOx and soot, with physical-unit
//! standardization folded into the artifact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read as _, Write as _};
use std::path::Path;

use crate::error::{CoreError, Result};

/// Layer widths of the full-size network: 10 inputs, three hidden layers,
/// two outputs.
pub const DEFAULT_WIDTHS: [usize; 5] = [10, 1024, 512, 32, 2];

/// On-disk magic for model files.
const MODEL_MAGIC: &[u8; 4] = b"EMNN";
/// Current model file version.
const MODEL_VERSION: u32 = 1;

/// Input standardization and target scaling fitted on the training
/// partition and applied inside [`MlpModel::forward`].
///
/// Targets are scaled by their standard deviation but **not** centered:
/// the network's rectified-linear output layer can only produce
/// nonnegative values, which matches nonnegative emissions in scaled units
/// but could not represent mean-removed targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub in_mean: Vec<f64>,
    pub in_std: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl Standardizer {
    /// Identity transform for the given widths (used by unit-scale tests).
    pub fn identity(n_in: usize, n_out: usize) -> Self {
        Self {
            in_mean: vec![0.0; n_in],
            in_std: vec![1.0; n_in],
            out_scale: vec![1.0; n_out],
        }
    }

    /// Fit from input rows and target rows. Constant columns get unit
    /// scale so the transform stays invertible.
    pub fn fit(inputs: &[Vec<f64>], targets: &[[f64; 2]]) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(CoreError::invalid(
                "standardizer needs matching nonempty sets",
            ));
        }
        let n = inputs.len() as f64;
        let dim = inputs[0].len();
        let mut in_mean = vec![0.0; dim];
        for row in inputs {
            for (m, v) in in_mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut in_std = vec![0.0; dim];
        for row in inputs {
            for ((s, v), m) in in_std.iter_mut().zip(row).zip(&in_mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut in_std {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        let mut out_scale = vec![0.0; 2];
        for t in targets {
            for (s, v) in out_scale.iter_mut().zip(t) {
                *s += v * v / n;
            }
        }
        for s in &mut out_scale {
            *s = s.sqrt();
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Ok(Self {
            in_mean,
            in_std,
            out_scale,
        })
    }

    /// Physical input -> standardized column.
    pub fn encode_input(&self, y0: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            y0.len(),
            y0.iter()
                .zip(&self.in_mean)
                .zip(&self.in_std)
                .map(|((v, m), s)| (v - m) / s),
        )
    }

    /// Physical target -> scaled column.
    pub fn encode_target(&self, t: &[f64; 2]) -> DVector<f64> {
        DVector::from_iterator(2, t.iter().zip(&self.out_scale).map(|(v, s)| v / s))
    }

    /// Scaled network output -> physical units.
    pub fn decode_output(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter().zip(&self.out_scale).map(|(v, s)| v * s).collect()
    }
}

/// Rectified-linear multilayer perceptron. `weights[i]` maps layer `i`
/// activations (width `widths[i]`) to layer `i+1` pre-activations; every
/// layer, including the output, passes through relu.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub widths: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub norm: Standardizer,
}

fn relu_inplace(m: &mut DMatrix<f64>) {
    for v in m.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

impl MlpModel {
    /// Seeded uniform init: weights with bound `sqrt(6 / fan_in)` — the
    /// standard choice for relu stacks — and biases drawn small and
    /// nonnegative (`[0, 1/sqrt(fan_in)]`) so rectified units start alive
    /// even for inputs that standardize to zero.
    pub fn new_random<R: Rng>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(CoreError::invalid("need at least two nonzero layer widths"));
        }
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for i in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                rng.gen_range(-bound..=bound)
            }));
            let b_bound = 1.0 / (fan_in as f64).sqrt();
            biases.push(DVector::from_fn(fan_out, |_, _| {
                rng.gen_range(0.0..=b_bound)
            }));
        }
        Ok(Self {
            widths: widths.to_vec(),
            weights,
            biases,
            norm: Standardizer::identity(widths[0], widths[widths.len() - 1]),
        })
    }

    /// All-zero parameters (tests and spec examples).
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut m = Self::new_random(widths, &mut rng)?;
        for w in &mut m.weights {
            w.fill(0.0);
        }
        for b in &mut m.biases {
            b.fill(0.0);
        }
        Ok(m)
    }

    pub fn n_inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Trainable parameter count (weights plus biases).
    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Forward pass on a standardized input batch (columns are samples).
    /// Returns the scaled-output batch.
    pub fn forward_scaled(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let mut z = w * a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            relu_inplace(&mut z);
            a = z;
        }
        a
    }

    /// Physical-unit inference for one input vector.
    pub fn forward(&self, y0: &[f64]) -> Result<Vec<f64>> {
        if y0.len() != self.n_inputs() {
            return Err(CoreError::invalid(format!(
                "input width {} != model width {}",
                y0.len(),
                self.n_inputs()
            )));
        }
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("non-finite network input"));
        }
        let x = DMatrix::from_column_slice(y0.len(), 1, self.norm.encode_input(y0).as_slice());
        let out = self.forward_scaled(&x);
        Ok(self.norm.decode_output(&out.column(0).into_owned()))
    }

    /// Serialize: magic, version, JSON header (widths + standardizer),
    /// then every parameter as little-endian f64 (weights row-major, then
    /// bias, per layer).
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&ModelHeader {
            widths: self.widths.clone(),
            norm: self.norm.clone(),
        })?;
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(MODEL_MAGIC)?;
        file.write_all(&MODEL_VERSION.to_le_bytes())?;
        file.write_all(&(header.len() as u64).to_le_bytes())?;
        file.write_all(&header)?;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    file.write_all(&w[(r, c)].to_le_bytes())?;
                }
            }
            for v in b.iter() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Load a file produced by [`MlpModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)
            .map_err(|_| CoreError::artifact("model file truncated before magic"))?;
        if &magic != MODEL_MAGIC {
            return Err(CoreError::artifact("not a model file (bad magic)"));
        }
        let mut v4 = [0u8; 4];
        file.read_exact(&mut v4)
            .map_err(|_| CoreError::artifact("model file truncated before version"))?;
        let version = u32::from_le_bytes(v4);
        if version != MODEL_VERSION {
            return Err(CoreError::artifact(format!(
                "unsupported model file version {version} (expected {MODEL_VERSION})"
            )));
        }
        let mut l8 = [0u8; 8];
        file.read_exact(&mut l8)
            .map_err(|_| CoreError::artifact("model file truncated before header"))?;
        let hlen = u64::from_le_bytes(l8) as usize;
        let mut hbuf = vec![0u8; hlen];
        file.read_exact(&mut hbuf)
            .map_err(|_| CoreError::artifact("model file truncated inside header"))?;
        let header: ModelHeader = serde_json::from_slice(&hbuf)?;
        if header.widths.len() < 2 || header.widths.iter().any(|&w| w == 0) {
            return Err(CoreError::artifact("model header has invalid widths"));
        }
        let mut read_f64 = |ctx: &str| -> Result<f64> {
            let mut b = [0u8; 8];
            file.read_exact(&mut b)
                .map_err(|_| CoreError::artifact(format!("model file truncated in {ctx}")))?;
            Ok(f64::from_le_bytes(b))
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..header.widths.len() - 1 {
            let (n_in, n_out) = (header.widths[i], header.widths[i + 1]);
            let mut w = DMatrix::zeros(n_out, n_in);
            for r in 0..n_out {
                for c in 0..n_in {
                    w[(r, c)] = read_f64("weights")?;
                }
            }
            let mut b = DVector::zeros(n_out);
            for r in 0..n_out {
                b[r] = read_f64("biases")?;
            }
            weights.push(w);
            biases.push(b);
        }
        let model = Self {
            widths: header.widths,
            weights,
            biases,
            norm: header.norm,
        };
        if model
            .weights
            .iter()
            .any(|w| w.iter().any(|v| !v.is_finite()))
        {
            return Err(CoreError::artifact(
                "model file contains non-finite weights",
            ));
        }
        Ok(model)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    widths: Vec<usize>,
    norm: Standardizer,
}
