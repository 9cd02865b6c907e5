//! Language-tagged vocabulary and the synthetic two-language corpus.

mod generate;
pub mod io;
mod vocab;

pub use generate::{
    cs_transcript, generate, mono_transcript, synthesize, Corpus, CorpusSpec, Prototypes, UttClass, Utterance,
};
pub use vocab::{Language, Tag, Token, TokenId, VocabError, Vocabulary, BLANK, EOS, SOS};

use std::path::Path;

use crate::autodiff::GraphError;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid corpus spec: {field}: {msg}")]
    InvalidSpec { field: &'static str, msg: String },
    #[error("utterance needs {required} encoder frames for CTC but has {frames}")]
    Infeasible { frames: usize, required: usize },
    #[error("token {0} has no acoustic prototype")]
    NoPrototype(TokenId),
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Tensor(#[from] GraphError),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.display().to_string(), source }
    }
}
