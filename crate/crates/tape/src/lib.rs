//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! Operations are methods on [`Tape`]; each records its output value and a
//! [`Backward`] rule. Downstream crates add their own differentiable
//! operations by implementing [`Backward`] and calling [`Tape::push`].

pub mod kernels;
mod ops;
mod real;
mod tape;
mod tensor;

#[cfg(feature = "gradcheck")]
pub mod gradcheck;

pub use ops::softmax_dim1;
pub use real::{gemm, MatRef, Real};
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::{ShapeError, Tensor};
