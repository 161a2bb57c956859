//! Dense matrices, reverse-mode autodiff, MLPs and first-order optimizers.

pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod optim;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use mlp::{Activation, Mlp, MlpSpec, MlpVars};
pub use optim::{Direction, Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var};
