//! Dense tensors with reverse-mode automatic differentiation.

mod checkpoint;
mod gradcheck;
mod nn;
mod params;
mod tape;
mod tensor;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GradSample};
pub use nn::{cross_entropy_logits, glorot, Binder, Gru, Linear};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{CustomBackward, Gradients, Tape, Var};
pub use tensor::{Tensor, TensorError};

#[cfg(test)]
mod tests;
