//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! The primitive set is the one the network and the training loss need:
//! matrix products, broadcasting arithmetic, row gathers and scatter-adds
//! keyed by index lists, per-segment softmax, activations and layer
//! normalization. [`grad_check`] compares reverse-mode gradients against
//! central finite differences and is used as the test oracle throughout.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, CoordinateStatus, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;

/// Epsilon added to the variance in layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("index {index} out of range {bound} in {op}")]
    InvalidIndex {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("invalid segment indices in {op}: {reason}")]
    InvalidSegments { op: &'static str, reason: String },
    #[error("{0} requires at least one input")]
    Empty(&'static str),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward already ran on this tape; call zero_grad first")]
    AlreadyBackpropagated,
    #[error("non-finite function value {0} during gradient check")]
    NonFinite(f64),
}

#[cfg(test)]
mod tests;
