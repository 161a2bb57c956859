//! Nuisance-robust estimation of conditional average treatment effects.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the estimators, the CLI and
//! the gradient checks use.

pub mod bounds;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod nuisance;
pub mod robust;
pub mod scalar;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix = tensor::Matrix<f64>;
pub type Mlp = tensor::Mlp<f64>;
pub type Tape = tensor::Tape<f64>;
pub type Optimizer = tensor::Optimizer<f64>;
