//! Minimal reverse-mode automatic differentiation over dense tensors.

pub mod checkpoint;
pub mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use params::{sgd_step, Adam, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Scalar, Tensor};
