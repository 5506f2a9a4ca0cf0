//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] records operations as they execute; [`Tape::backward`] walks
//! the record in reverse and accumulates gradients into every node that
//! depends on a [`Tape::param`] leaf.

mod conv;
mod gemm;
mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, GradcheckReport};
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;

pub(crate) use tape::sqdist_matrix;

#[cfg(test)]
mod tests;
