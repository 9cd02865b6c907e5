//! Beam-search decoding with optional shallow-fusion bigram LM and
//! whole-hypothesis CTC rescoring.
//!
//! Decoded files are JSON lines, one per utterance:
//!
//! ```text
//! {"id":"test_cs-00003","tokens":[5,27,6],"att_score":-1.25,"lm_score":-7.5,"joint_score":-1.5,"finished":true}
//! ```

mod beam;
mod lm;

pub use beam::{beam_search, ctc_posteriors, ctc_rescore, greedy_decode, rank, Hypothesis};
pub use lm::{BigramLm, LM_FORMAT};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, Utterance, Vocabulary};
use crate::model::{Model, ModelError};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("invalid decode settings: {0}")]
    Config(String),
    #[error("language model: {0}")]
    Lm(String),
    #[error("vocabulary size mismatch: expected {expected}, got {got}")]
    VocabMismatch { expected: usize, got: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Search settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Shallow-fusion weight; only used when a language model is supplied.
    pub lm_weight: f64,
    /// CTC share of the joint rescoring score.
    pub ctc_rescore_weight: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { beam: 30, max_len: 16, lm_weight: 0.0, ctc_rescore_weight: 0.0 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam == 0 || self.max_len == 0 {
            return Err(DecodeError::Config("beam and max_len must be at least 1".into()));
        }
        if !(self.lm_weight.is_finite() && self.lm_weight >= 0.0) {
            return Err(DecodeError::Config(format!("lm_weight must be non-negative, got {}", self.lm_weight)));
        }
        if !(0.0..=1.0).contains(&self.ctc_rescore_weight) {
            return Err(DecodeError::Config(format!(
                "ctc_rescore_weight must lie in [0, 1], got {}",
                self.ctc_rescore_weight
            )));
        }
        Ok(())
    }
}

/// Best hypothesis of one utterance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodedRecord {
    pub id: String,
    pub tokens: Vec<TokenId>,
    pub att_score: f64,
    pub lm_score: f64,
    pub joint_score: f64,
    pub finished: bool,
}

/// Full decoding pipeline for one utterance: beam search, then CTC
/// rescoring of the whole beam.
pub fn decode_one(
    model: &Model,
    vocab: &Vocabulary,
    utt: &Utterance,
    cfg: &DecodeConfig,
    lm: Option<&BigramLm>,
) -> Result<DecodedRecord, DecodeError> {
    let mut hyps = beam_search(model, vocab, &utt.features, cfg.beam, cfg.max_len, lm.map(|l| (l, cfg.lm_weight)))?;
    if cfg.ctc_rescore_weight > 0.0 {
        let lp = ctc_posteriors(model, &utt.features)?;
        ctc_rescore(&mut hyps, &lp, cfg.ctc_rescore_weight)?;
    }
    let best = hyps.into_iter().next().expect("beam search returns at least one hypothesis");
    Ok(DecodedRecord {
        id: utt.id.clone(),
        tokens: best.tokens,
        att_score: best.att_score,
        lm_score: best.lm_score,
        joint_score: best.score,
        finished: best.finished,
    })
}

/// Decodes utterances in parallel; output order follows input order.
pub fn decode_all(
    model: &Model,
    vocab: &Vocabulary,
    utts: &[Utterance],
    cfg: &DecodeConfig,
    lm: Option<&BigramLm>,
) -> Result<Vec<DecodedRecord>, DecodeError> {
    cfg.validate()?;
    if model.config.vocab_size != vocab.len() {
        return Err(DecodeError::VocabMismatch { expected: vocab.len(), got: model.config.vocab_size });
    }
    utts.par_iter().map(|u| decode_one(model, vocab, u, cfg, lm)).collect()
}

pub fn format_decoded(records: &[DecodedRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serialises") + "\n").collect()
}

pub fn parse_decoded(text: &str, file: &str) -> Result<Vec<DecodedRecord>, DecodeError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| DecodeError::Parse { file: file.into(), line: i + 1, msg: e.to_string() })
        })
        .collect()
}

pub fn write_decoded(path: &Path, records: &[DecodedRecord]) -> Result<(), DecodeError> {
    std::fs::write(path, format_decoded(records)).map_err(|source| DecodeError::Io { path: path.display().to_string(), source })
}

pub fn read_decoded(path: &Path) -> Result<Vec<DecodedRecord>, DecodeError> {
    let text = std::fs::read_to_string(path).map_err(|source| DecodeError::Io { path: path.display().to_string(), source })?;
    parse_decoded(&text, &path.display().to_string())
}
