#![allow(dead_code)]

use csasr::config::RunConfig;
use csasr::corpus::{generate, Corpus, CorpusSpec};
use csasr::losses::{Jitter, LossWeights, Mode};
use csasr::model::ModelConfig;
use csasr::train::{OptimizerConfig, TrainSettings};

pub fn tiny_spec(seed: u64) -> CorpusSpec {
    CorpusSpec {
        l1_tokens: 3,
        l2_tokens: 3,
        train_l1: 6,
        train_l2: 6,
        test_mono_l1: 4,
        test_mono_l2: 4,
        test_cs: 6,
        lm_text: 30,
        min_tokens: 2,
        max_tokens: 4,
        feature_dim: 4,
        seed,
        ..CorpusSpec::default()
    }
}

pub fn tiny_corpus(seed: u64) -> Corpus {
    generate(&tiny_spec(seed)).unwrap()
}

pub fn tiny_model_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        feature_dim: 4,
        encoder_hidden: 5,
        decoder_hidden: 6,
        embed_dim: 4,
        attention_dim: 5,
        location_channels: 2,
        location_width: 3,
        vocab_size,
        seed,
        ..ModelConfig::default()
    }
}

pub fn settings(mode: Mode, optimizer: OptimizerConfig) -> TrainSettings {
    TrainSettings {
        weights: LossWeights { lambda: 0.2, alpha: 0.5, beta: 0.9 },
        mode,
        jitter: Jitter::default(),
        optimizer,
        seed: 3,
    }
}

/// Small end-to-end configuration writing into `dir`.
pub fn small_run_config(dir: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.corpus = CorpusSpec { feature_dim: 8, ..tiny_spec(2) };
    cfg.corpus.train_l1 = 20;
    cfg.corpus.train_l2 = 20;
    cfg.model = ModelConfig { feature_dim: 8, vocab_size: 9, ..tiny_model_config(9, 2) };
    cfg.optimizer.epochs = 2;
    cfg.decode.beam = 3;
    cfg.output_dir = dir.to_path_buf();
    cfg
}
