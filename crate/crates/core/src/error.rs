//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the plant, data pipeline, surrogate, identification
/// and control layers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An input artifact (dataset, model file, LPV file) is missing or
    /// cannot be parsed.
    #[error("artifact error: {0}")]
    Artifact(String),

    /// A numeric routine failed to produce a usable result (divergence,
    /// iteration cap, singular system).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Underlying I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialisation failure.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidConfig(msg.into())
    }

    pub fn artifact(msg: impl Into<String>) -> Self {
        CoreError::Artifact(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CoreError::Numerical(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
