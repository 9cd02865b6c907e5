//! Training objectives: CTC, attention cross-entropy, the two embedding
//! constraints and their weighted fusions.

mod attention;
mod ctc;
mod fusion;
mod gaussian;

pub use attention::attention_loss;
pub use ctc::{ctc_feasible, ctc_loss, ctc_neg_log_likelihood, ctc_required_frames, CtcOp};
pub use fusion::{fusion_coefficients, mtl_loss, mtl_value, ComponentLosses, LossWeights, Mode};
pub use gaussian::{cd_constraint, centroid, fit_gaussian, jsd_constraint, GaussianStats, Jitter};

use crate::autodiff::GraphError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error(
        "CTC target of length {target_len} needs at least {required} frames, only {frames} available"
    )]
    CtcInfeasible { target_len: usize, required: usize, frames: usize },
    #[error("token id {token} is outside the {size}-entry output layer")]
    TokenOutOfRange { token: usize, size: usize },
    #[error("CTC target contains the blank id {0}")]
    BlankInTarget(usize),
    #[error("{logits} decoder steps but {targets} target tokens")]
    LengthMismatch { logits: usize, targets: usize },
    #[error("need at least {needed} embedding rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error(
        "covariance of language {language} is ill-conditioned (condition estimate {condition:.3e}); \
         increase the covariance jitter"
    )]
    IllConditioned { language: u8, condition: f64 },
    #[error("centroid {which} has (near) zero norm {norm:.3e}")]
    ZeroNormCentroid { which: u8, norm: f64 },
    #[error("invalid loss weight {name} = {value} (must lie in [0, 1])")]
    InvalidWeight { name: &'static str, value: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
}
