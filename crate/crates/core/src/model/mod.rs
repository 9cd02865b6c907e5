//! Hybrid CTC/attention encoder-decoder and its checkpoint format.

pub mod checkpoint;
mod config;
mod network;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use config::ModelConfig;
pub use network::{
    attend, ctc_log_probs, decode_step, decoder_step, encode, initial_state, prepare_attention, stack_frames,
    teacher_forced_logits, AttentionMemory, Bound, DecoderState, EncoderStates, Model, Params, INIT_RANGE,
};

use crate::autodiff::GraphError;
use crate::corpus::TokenId;

/// Output projection weights; row `k` is the embedding of token `k`.
pub const EMBEDDING_PARAM: &str = "out.embedding";
/// Output projection bias, kept apart from the embeddings.
pub const OUTPUT_BIAS_PARAM: &str = "out.bias";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {field}: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("empty input utterance")]
    EmptyInput,
    #[error("input frames have {got} features, model expects {expected}")]
    FeatureDim { expected: usize, got: usize },
    #[error("token {token} outside vocabulary of size {vocab_size}")]
    UnknownToken { token: TokenId, vocab_size: usize },
    #[error("parameter mismatch: {0}")]
    ParamMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Graph(#[from] GraphError),
}
