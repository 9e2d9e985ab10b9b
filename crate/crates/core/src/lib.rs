//! Desk-scale laboratory for hierarchical economic MPC of a diesel engine
//! airpath with emission surrogates.
//!
//! The crate is organised as a pipeline:
//!
//! 1. [`plant`] — a synthetic mean-value diesel engine with airpath dynamics
//!    and NOx/soot response, used as ground truth everywhere else.
//! 2. [`data`] — logging, input selection, outlier filtering, balancing and
//!    splitting of training data harvested from the plant.
//! 3. [`nn`] — a from-scratch multilayer perceptron emission surrogate with
//!    SGD-with-momentum training.
//! 4. [`lpv`] — grid-scheduled linear parameter-varying models identified
//!    from perturbation experiments on the plant (+ surrogate).
//! 5. [`qp`] — a dense convex QP solver and rate-based prediction model
//!    builders shared by the controllers.
//! 6. [`control`] — the supervisory economic MPC and the feedforward /
//!    feedback airpath tracking MPCs.
//! 7. [`cycle`] — drive cycles, closed-loop scenario runner, metrics and
//!    report rendering.

pub mod control;
pub mod cycle;
pub mod data;
pub mod error;
pub mod lpv;
pub mod nn;
pub mod plant;
pub mod qp;
pub mod rng;

#[cfg(test)]
pub(crate) mod test_support;

pub use error::CoreError;
pub use plant::{ActuatorInput, AirpathState, EmissionState, OperatingPoint};
