//! Reverse-mode differentiation over dense `f64` tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck, REL_ERROR_FLOOR};
pub use graph::{CustomOp, Gradients, Graph, Var, MAX_CONDITION};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: index {index} out of range (length {len})")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("inverse: matrix is singular or ill-conditioned (condition estimate {condition:.3e})")]
    Singular { condition: f64 },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward already ran on this graph; call zero_grad() to run it again")]
    AlreadyBackpropagated,
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
