//! Differentiable operations, exposed as methods on [`crate::Tape`].

mod activation;
mod conv;
mod norm;
mod shape;

pub use activation::softmax_dim1;
