//! Dataset containers shared by the generators, the preparation pipeline,
//! and the network trainer.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Provenance of a sample: measured at rest on the steady-state grid, or
/// recorded while the plant was in motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Steady,
    Transient,
}

impl SampleKind {
    /// Stable lowercase token used in CSV files.
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Steady => "steady",
            SampleKind::Transient => "transient",
        }
    }

    /// Parse the CSV token back.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "steady" => Ok(SampleKind::Steady),
            "transient" => Ok(SampleKind::Transient),
            other => Err(CoreError::invalid(format!("unknown sample kind {other:?}"))),
        }
    }
}

/// One training example: sensor-channel inputs and the two emission targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub kind: SampleKind,
    /// Log time in seconds (0 for steady-state points).
    pub t: f64,
    /// Input channels, ordered to match the owning dataset's column list.
    pub inputs: Vec<f64>,
    /// NOx in ppm, soot in %.
    pub targets: [f64; 2],
}

impl Sample {
    /// Check the finiteness and sign invariants.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("non-finite input channel"));
        }
        if self.targets.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CoreError::invalid("targets must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Named-column sample collection. Every sample's input width matches
/// `columns.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            samples: Vec::new(),
        }
    }

    /// Validate widths and per-sample invariants.
    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.inputs.len() != self.columns.len() {
                return Err(CoreError::invalid(format!(
                    "sample {i} has {} inputs, expected {}",
                    s.inputs.len(),
                    self.columns.len()
                )));
            }
            s.validate()
                .map_err(|e| CoreError::invalid(format!("sample {i}: {e}")))?;
        }
        Ok(())
    }

    /// Column index by name.
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| CoreError::invalid(format!("no column named {name:?}")))
    }

    /// Values of one input column across all samples.
    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.inputs[idx]).collect()
    }

    /// Values of one target across all samples (0 = NOx, 1 = soot).
    pub fn target(&self, idx: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.targets[idx]).collect()
    }

    /// New dataset keeping only the named columns, in the given order.
    pub fn with_columns(&self, names: &[String]) -> Result<Dataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n))
            .collect::<Result<_>>()?;
        let samples = self
            .samples
            .iter()
            .map(|s| Sample {
                kind: s.kind,
                t: s.t,
                inputs: idx.iter().map(|&i| s.inputs[i]).collect(),
                targets: s.targets,
            })
            .collect();
        Ok(Dataset {
            columns: names.to_vec(),
            samples,
        })
    }

    /// Input rows as plain vectors (for covariance estimation).
    pub fn input_rows(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.inputs.clone()).collect()
    }
}

/// Train/validation/test partition of one sample pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Partition fractions used throughout: 70 % train, 15 % validation,
/// 15 % test.
pub const SPLIT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);
