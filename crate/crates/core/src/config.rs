//! Run configuration: one TOML file describing corpus, model, objective,
//! optimizer, decoding and output location. See `configs/default.toml` at
//! the repository root for a commented example.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, CorpusSpec};
use crate::decode::{DecodeConfig, DecodeError};
use crate::losses::{Jitter, LossError, LossWeights, Mode};
use crate::model::{ModelConfig, ModelError};
use crate::train::{OptimizerConfig, TrainError, TrainSettings};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config field {field}: {msg}")]
    Field { field: String, msg: String },
}

impl ConfigError {
    fn field(section: &str, field: &str, msg: impl std::fmt::Display) -> Self {
        ConfigError::Field { field: format!("{section}.{field}"), msg: msg.to_string() }
    }
}

/// Objective weights. `alpha` defaults per mode (cd_only 0.9, jsd_only
/// 0.97, combined 0.05); `beta` only applies to combined mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub lambda: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection { lambda: 0.2, alpha: None, beta: None }
    }
}

pub fn default_alpha(mode: Mode) -> f64 {
    match mode {
        Mode::Baseline => 1.0,
        Mode::CdOnly => 0.9,
        Mode::JsdOnly => 0.97,
        Mode::Combined => 0.05,
    }
}

pub const DEFAULT_BETA: f64 = 0.9;

/// Analysis cadence and shallow-fusion LM smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// Geometry snapshot every this many epochs (the final epoch is always
    /// included).
    pub snapshot_every: usize,
    /// Add-k smoothing of the bigram LM built by `train-lm`.
    pub lm_smoothing: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { snapshot_every: 1, lm_smoothing: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of the training batch order; `--seed` also sets the corpus and
    /// model seeds.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub mode: Mode,
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    pub weights: WeightsSection,
    pub jitter: Jitter,
    pub optimizer: OptimizerConfig,
    pub decode: DecodeConfig,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            mode: Mode::Baseline,
            corpus: CorpusSpec::default(),
            model: ModelConfig::default(),
            weights: WeightsSection::default(),
            jitter: Jitter::default(),
            optimizer: OptimizerConfig::default(),
            decode: DecodeConfig::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value), ConfigError> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override '{text}' is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(ConfigError::Parse(format!("override '{text}' has an empty key")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override path {} crosses a non-table value", path.join("."))))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies `key=value` overrides (dotted keys, TOML
    /// values; bare words are taken as strings) and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<(RunConfig, Vec<String>), ConfigError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            let (path, value) = parse_override(o)?;
            set_path(&mut table, &path, value)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Sets the batch-order, corpus and model seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.corpus.seed = seed;
        self.model.seed = seed;
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.weights.lambda,
            alpha: self.weights.alpha.unwrap_or_else(|| default_alpha(self.mode)),
            beta: self.weights.beta.unwrap_or(DEFAULT_BETA),
        }
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            weights: self.loss_weights(),
            mode: self.mode,
            jitter: self.jitter,
            optimizer: self.optimizer.clone(),
            seed: self.seed,
        }
    }

    /// Field-level validation. Returns warnings for settings that the chosen
    /// mode ignores.
    pub fn validate(&self) -> Result<Vec<String>, ConfigError> {
        self.corpus.validate().map_err(|e| match e {
            CorpusError::InvalidSpec { field, msg } => ConfigError::field("corpus", field, msg),
            other => ConfigError::Parse(other.to_string()),
        })?;
        self.model.validate().map_err(|e| match e {
            ModelError::Config { field, msg } => ConfigError::field("model", field, msg),
            other => ConfigError::Parse(other.to_string()),
        })?;
        let vocab = self.corpus.l1_tokens + self.corpus.l2_tokens + 3;
        let consistency = [
            ("vocab_size", self.model.vocab_size, vocab, "corpus.l1_tokens + corpus.l2_tokens + 3"),
            ("feature_dim", self.model.feature_dim, self.corpus.feature_dim, "corpus.feature_dim"),
            ("downsample_factor", self.model.downsample_factor, self.corpus.downsample_factor, "corpus.downsample_factor"),
        ];
        for (field, got, want, source) in consistency {
            if got != want {
                return Err(ConfigError::field("model", field, format!("is {got} but must equal {source} = {want}")));
            }
        }
        self.loss_weights().validate().map_err(|e| match e {
            LossError::InvalidWeight { name, value } => ConfigError::field("weights", name, format!("{value} is outside [0, 1]")),
            other => ConfigError::Parse(other.to_string()),
        })?;
        match self.jitter {
            Jitter::Fixed { epsilon } if !(epsilon.is_finite() && epsilon > 0.0) => {
                return Err(ConfigError::field("jitter", "epsilon", format!("must be positive, got {epsilon}")));
            }
            Jitter::Relative { scale, floor } if !(scale.is_finite() && scale >= 0.0 && floor.is_finite() && floor > 0.0) => {
                return Err(ConfigError::field("jitter", "scale", "scale must be non-negative and floor positive"));
            }
            _ => {}
        }
        self.optimizer.validate().map_err(|e| match e {
            TrainError::Config { field, msg } => ConfigError::field("optimizer", field, msg),
            other => ConfigError::Parse(other.to_string()),
        })?;
        self.decode.validate().map_err(|e| match e {
            DecodeError::Config(msg) => ConfigError::Field { field: "decode".into(), msg },
            other => ConfigError::Parse(other.to_string()),
        })?;
        if self.analysis.snapshot_every == 0 {
            return Err(ConfigError::field("analysis", "snapshot_every", "must be at least 1"));
        }
        if !(self.analysis.lm_smoothing.is_finite() && self.analysis.lm_smoothing > 0.0) {
            return Err(ConfigError::field("analysis", "lm_smoothing", "must be positive"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(ConfigError::Field { field: "output_dir".into(), msg: "must not be empty".into() });
        }
        let mut warnings = Vec::new();
        if self.mode == Mode::Baseline && (self.weights.alpha.is_some() || self.weights.beta.is_some()) {
            warnings.push("weights.alpha and weights.beta are ignored in baseline mode".to_string());
        } else if self.mode != Mode::Combined && self.weights.beta.is_some() {
            warnings.push(format!("weights.beta is ignored in {} mode", self.mode));
        }
        Ok(warnings)
    }
}
