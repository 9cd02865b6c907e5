mod common;

use std::fs;

use csasr::corpus::generate;
use csasr::decode::{decode_all, DecodeConfig};
use csasr::losses::{Jitter, Mode};
use csasr::metrics::evaluate;
use csasr::model::{read_checkpoint, Model};
use csasr::runner::{self, RunError};
use csasr::train::{evaluate_objective, OptimizerConfig, OptimizerKind, TrainError, Trainer};

#[test]
fn one_epoch_on_a_micro_corpus_lowers_the_loss() {
    let spec = csasr::corpus::CorpusSpec { train_l1: 5, train_l2: 5, ..common::tiny_spec(8) };
    let corpus = generate(&spec).unwrap();
    assert_eq!(corpus.train.len(), 10);
    for mode in Mode::ALL {
        let settings = common::settings(mode, OptimizerConfig { batch_size: 2, ..OptimizerConfig::default() });
        let model = Model::new(common::tiny_model_config(corpus.vocab.len(), 8)).unwrap();
        let before = evaluate_objective(&model, &corpus.vocab, &corpus.train, &settings).unwrap().total;
        let mut trainer = Trainer::new(model, settings.optimizer.clone());
        let log = trainer.run_epoch(&corpus.train, &corpus.vocab, &settings).unwrap();
        let after = evaluate_objective(&trainer.model, &corpus.vocab, &corpus.train, &settings).unwrap().total;
        assert!(after < before, "{mode}: {before} -> {after}");
        assert_eq!(log.epoch, 1);
        assert_eq!(trainer.step, 5);
    }
}

#[test]
fn resumed_training_is_bit_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let mut straight = common::small_run_config(&tmp.path().join("straight"));
    straight.mode = Mode::Combined;
    straight.optimizer.epochs = 3;
    runner::gen_data(&straight).unwrap();
    runner::train(&straight, None, &mut |_| {}).unwrap();

    let mut split = straight.clone();
    split.output_dir = tmp.path().join("split");
    split.optimizer.epochs = 1;
    runner::gen_data(&split).unwrap();
    runner::train(&split, None, &mut |_| {}).unwrap();
    split.optimizer.epochs = 3;
    let resume = runner::train_dir(&split).join("checkpoints").join("epoch-001.ckpt");
    runner::train(&split, Some(&resume), &mut |_| {}).unwrap();

    for file in ["final.ckpt", "train_log.csv", "geometry.csv", "checkpoints/epoch-002.ckpt", "checkpoints/epoch-003.ckpt"] {
        let a = fs::read(runner::train_dir(&straight).join(file)).unwrap();
        let b = fs::read(runner::train_dir(&split).join(file)).unwrap();
        assert!(a == b, "{file} differs after resume");
    }
}

#[test]
fn overfitting_a_handful_of_utterances_reaches_zero_error() {
    let spec = csasr::corpus::CorpusSpec { train_l1: 3, train_l2: 3, noise: 0.1, ..common::tiny_spec(9) };
    let corpus = generate(&spec).unwrap();
    let optimizer = OptimizerConfig {
        kind: OptimizerKind::Adam,
        learning_rate: 0.02,
        batch_size: 6,
        epochs: 300,
        ..OptimizerConfig::default()
    };
    let settings = common::settings(Mode::Baseline, optimizer);
    let mut trainer = Trainer::new(Model::new(common::tiny_model_config(corpus.vocab.len(), 9)).unwrap(), settings.optimizer.clone());
    for _ in 0..settings.optimizer.epochs {
        trainer.run_epoch(&corpus.train, &corpus.vocab, &settings).unwrap();
    }
    let recs = decode_all(&trainer.model, &corpus.vocab, &corpus.train, &DecodeConfig { beam: 4, ..DecodeConfig::default() }, None).unwrap();
    let hyps = recs.into_iter().map(|r| (r.id, r.tokens)).collect();
    let report = evaluate(&corpus.train, &hyps);
    assert_eq!(report.all.error_rate, 0.0, "{}", report.to_table());
}

#[test]
fn singular_covariance_aborts_with_a_jitter_hint() {
    let corpus = common::tiny_corpus(10);
    let mut settings = common::settings(Mode::JsdOnly, OptimizerConfig::default());
    settings.jitter = Jitter::Fixed { epsilon: 0.0 };
    let model = Model::new(common::tiny_model_config(corpus.vocab.len(), 10)).unwrap();
    let mut trainer = Trainer::new(model.clone(), settings.optimizer.clone());
    let err = trainer.run_epoch(&corpus.train, &corpus.vocab, &settings).unwrap_err();
    assert!(matches!(err, TrainError::Diverged { .. }), "{err}");
    assert!(err.to_string().contains("jitter"), "{err}");
    assert_eq!(trainer.model, model, "parameters must be retained on failure");
}

#[test]
fn corpus_round_trips_through_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::small_run_config(tmp.path());
    let table = runner::gen_data(&cfg).unwrap();
    assert!(table.contains("manifest sha256"));
    let (loaded, _) = runner::load_corpus(&cfg).unwrap();
    assert_eq!(loaded, generate(&cfg.corpus).unwrap());

    let mut other = cfg.clone();
    other.corpus.noise = 0.1;
    let err = runner::load_corpus(&other).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn commands_report_missing_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = common::small_run_config(tmp.path());
    let missing = |r: Result<(), RunError>| {
        let e = r.unwrap_err();
        assert!(matches!(e, RunError::Missing(_)), "{e}");
        assert_eq!(e.exit_code(), 2);
    };
    missing(runner::train(&cfg, None, &mut |_| {}).map(|_| ()));
    missing(runner::train_lm(&cfg).map(|_| ()));
    let ckpt = tmp.path().join("nope.ckpt");
    missing(runner::eval(&cfg, &ckpt, None).map(|_| ()));
    missing(runner::analyze(&cfg, &ckpt).map(|_| ()));
    missing(runner::sweep(&cfg, &[1.0], &mut |_| {}).map(|_| ()));
    assert!(runner::sweep(&cfg, &[1.5], &mut |_| {}).is_err());
}

#[test]
fn full_pipeline_writes_the_documented_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = common::small_run_config(tmp.path());
    cfg.mode = Mode::Combined;
    runner::gen_data(&cfg).unwrap();
    runner::train_lm(&cfg).unwrap();
    let mut epochs = Vec::new();
    let trainer = runner::train(&cfg, None, &mut |e| epochs.push(e.epoch)).unwrap();
    assert_eq!(epochs, vec![1, 2]);
    let ckpt = runner::final_checkpoint(&cfg);
    assert_eq!(read_checkpoint(&ckpt).unwrap(), trainer.checkpoint());

    let report = runner::eval(&cfg, &ckpt, Some(&runner::lm_path(&cfg))).unwrap();
    let (corpus, _) = runner::load_corpus(&cfg).unwrap();
    assert_eq!(report.cs.utterances, corpus.test_cs.len());
    assert_eq!(report.mono.utterances, corpus.test_mono.len());
    let before = fs::read(&ckpt).unwrap();
    let (analysis, dir) = runner::analyze(&cfg, &ckpt).unwrap();
    assert_eq!(fs::read(&ckpt).unwrap(), before, "analyze must not modify the checkpoint");
    assert_eq!(analysis.checkpoint_epoch, 2);

    for path in [
        "config.toml",
        "lm.json",
        "corpus/manifest.json",
        "train/run.json",
        "train/train_log.csv",
        "train/geometry.csv",
        "train/checkpoints/epoch-000.ckpt",
        "train/checkpoints/epoch-002.ckpt",
        "eval/decoded_test_mono.jsonl",
        "eval/decoded_test_cs.jsonl",
        "eval/report.txt",
        "eval/report.json",
    ] {
        assert!(tmp.path().join(path).is_file(), "missing {path}");
    }
    for file in ["scatter.svg", "scatter.csv", "report.json"] {
        assert!(dir.join(file).is_file(), "missing analyze/{file}");
    }
    let log = fs::read_to_string(tmp.path().join("train/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let geo = fs::read_to_string(tmp.path().join("train/geometry.csv")).unwrap();
    assert_eq!(geo.lines().count(), 4);
}
