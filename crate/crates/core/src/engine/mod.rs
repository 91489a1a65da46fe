//! Minimal tensor engine: n-dimensional arrays, reverse-mode
//! differentiation over a per-pass tape, the layer set used by the
//! autoencoder and attention classifier, and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::Adam;
pub use graph::{Conv2dSpec, Gradients, Graph, Var};
pub use params::ParamSet;
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch (expected {expected:?}, got {got:?})")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// He-style initialization: `N(0, 2 / fan_in)`.
pub fn he_normal<R: rand::Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng)
}

#[cfg(test)]
mod tests;
