//! Minimal reverse-mode differentiation over dense float-64 tensors.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use tape::{OpKind, Tape, Var};
pub use tensor::{Tensor, TensorError};
