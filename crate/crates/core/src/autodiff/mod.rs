//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters are bound onto it
//! as leaves, operations append nodes, and [`Tape::backward`] sweeps the
//! nodes in reverse, accumulating gradients additively across fan-out.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, numeric_gradient};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[cfg(test)]
pub(crate) use tape::sigmoid;
