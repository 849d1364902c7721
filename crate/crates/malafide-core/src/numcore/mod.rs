//! Minimal deterministic numerical substrate: dense `f64` tensors, 2D
//! same-size convolution with hand-derived kernel gradients, and the Adam
//! update rule. Everything here is a pure function over immutable inputs.

mod adam;
mod conv;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d_kernel_grad, conv2d_same};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumError {
    #[error("shape {shape:?} does not match {expected} values (got {actual})")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("tensor shapes differ: {left:?} vs {right:?}")]
    IncompatibleShapes { left: Vec<usize>, right: Vec<usize> },
    #[error("kernel size {0} must be odd and >= 1")]
    EvenKernel(usize),
    #[error("kernel size {kernel} exceeds padded image extent (min spatial dim {min_dim})")]
    KernelTooLarge { kernel: usize, min_dim: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("expected a rank-{expected} tensor, got shape {shape:?}")]
    BadRank { expected: usize, shape: Vec<usize> },
}

/// Sigmoid, used by detector training loss and nowhere hot.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}
