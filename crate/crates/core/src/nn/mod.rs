//! Emissions surrogate network: model definition, inference, from-scratch
//! training, and artifact serialization.

mod model;
mod train;

pub use model::{MlpModel, Standardizer, DEFAULT_WIDTHS};
pub use train::{loss_and_grad, train, ParamGrad, TestMae, TrainConfig, TrainReport};
