//! Command implementations behind the `csasr` binary. Each command takes a
//! validated [`RunConfig`], checks its inputs before touching the file
//! system, and writes into `output_dir`:
//!
//! ```text
//! <output_dir>/config.toml             resolved configuration
//! <output_dir>/corpus/                 gen-data
//! <output_dir>/lm.json                 train-lm
//! <output_dir>/train/run.json          seed, mode, corpus manifest hash
//! <output_dir>/train/train_log.csv     epoch,l_ctc,l_att,l_jsd,l_cd,total
//! <output_dir>/train/geometry.csv      step,divergence,cd,intra_L1,intra_L2
//! <output_dir>/train/checkpoints/epoch-NNN.ckpt, train/final.ckpt
//! <output_dir>/eval/                   decoded_*.jsonl, report.txt, report.json
//! <output_dir>/analyze/<checkpoint>/   scatter.svg, scatter.csv, report.json
//! <output_dir>/sweep/                  sweep.csv, sweep.svg, alpha-<w>/...
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{emit_scatter, geometry_report, line_plot_svg, pc_separation, pca_2d, AnalysisError, EmbeddingSnapshot, GeometryReport, Series, GEOMETRY_CSV_HEADER};
use crate::autodiff::Tensor;
use crate::config::{ConfigError, RunConfig};
use crate::corpus::io::{manifest_bytes, manifest_hash, read_corpus, read_manifest, write_corpus, MANIFEST_FILE};
use crate::corpus::{generate, Corpus, CorpusError, Vocabulary};
use crate::decode::{decode_all, write_decoded, BigramLm, DecodeError};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, Model, ModelError};
use crate::train::{EpochLog, TrainError, Trainer, TRAIN_LOG_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Missing(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Missing(_) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn corpus_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("corpus")
}

pub fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("train")
}

pub fn final_checkpoint(cfg: &RunConfig) -> PathBuf {
    train_dir(cfg).join("final.ckpt")
}

pub fn lm_path(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join("lm.json")
}

fn require(path: &Path, what: &str, hint: &str) -> Result<(), RunError> {
    if path.exists() {
        Ok(())
    } else {
        Err(RunError::Missing(format!("{what} not found at {} ({hint})", path.display())))
    }
}

fn save_config(cfg: &RunConfig) -> Result<(), RunError> {
    write_file(&cfg.output_dir.join("config.toml"), cfg.to_toml())
}

/// Loads the corpus for `cfg`, refusing one generated from another spec.
pub fn load_corpus(cfg: &RunConfig) -> Result<(Corpus, String), RunError> {
    let dir = corpus_dir(cfg);
    require(&dir.join(MANIFEST_FILE), "corpus manifest", "run gen-data first")?;
    let manifest = read_manifest(&dir)?;
    if manifest.spec != cfg.corpus {
        return Err(RunError::Missing(format!(
            "corpus in {} was generated from a different [corpus] section; rerun gen-data",
            dir.display()
        )));
    }
    let hash = manifest_hash(&manifest_bytes(&manifest));
    Ok((read_corpus(&dir)?, hash))
}

/// `gen-data`: writes the corpus and returns a statistics table.
pub fn gen_data(cfg: &RunConfig) -> Result<String, RunError> {
    let corpus = generate(&cfg.corpus)?;
    save_config(cfg)?;
    let manifest = write_corpus(&corpus_dir(cfg), &corpus)?;
    let mut out = format!("{:<10} {:>6} {:>6} {:>9} {:>9} {:>7}\n", "split", "utts", "cs", "L1 toks", "L2 toks", "frames");
    for s in &manifest.splits {
        out.push_str(&format!(
            "{:<10} {:>6} {:>6} {:>9} {:>9} {:>7}\n",
            s.name, s.utterances, s.code_switched, s.l1_tokens, s.l2_tokens, s.frames
        ));
    }
    out.push_str(&format!(
        "vocabulary: {} ids ({} L1, {} L2, 3 special); lm text: {} transcripts\nmanifest sha256: {}\n",
        corpus.vocab.len(),
        cfg.corpus.l1_tokens,
        cfg.corpus.l2_tokens,
        corpus.lm_text.len(),
        manifest_hash(&manifest_bytes(&manifest))
    ));
    Ok(out)
}

/// `train-lm`: add-k bigram LM over the corpus LM text.
pub fn train_lm(cfg: &RunConfig) -> Result<String, RunError> {
    let (corpus, _) = load_corpus(cfg)?;
    let lm = BigramLm::train(&corpus.vocab, &corpus.lm_text, cfg.analysis.lm_smoothing)?;
    let path = lm_path(cfg);
    write_file(&path, lm.to_json())?;
    Ok(format!("bigram LM over {} transcripts written to {}\n", corpus.lm_text.len(), path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub mode: String,
    pub corpus_manifest_sha256: String,
    pub param_count: usize,
}

fn geometry_of(model: &Model, vocab: &Vocabulary, step: u64, cfg: &RunConfig) -> Result<GeometryReport, RunError> {
    let snap = EmbeddingSnapshot::new(step, model.embeddings().clone(), vocab.clone())?;
    Ok(geometry_report(&snap, cfg.jitter)?)
}

fn read_rows_until(path: &Path, header: &str, keep: impl Fn(&str) -> bool) -> Result<String, RunError> {
    let mut out = format!("{header}\n");
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1).filter(|l| keep(l)) {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

fn leading_number(line: &str) -> u64 {
    line.split(',').next().and_then(|v| v.parse().ok()).unwrap_or(u64::MAX)
}

/// `train`: trains for `optimizer.epochs` epochs (continuing from `resume`
/// if given), writing a checkpoint per epoch, the loss log and the geometry
/// history. `progress` receives each epoch's log line.
pub fn train(cfg: &RunConfig, resume: Option<&Path>, progress: &mut dyn FnMut(&EpochLog)) -> Result<Trainer, RunError> {
    if let Some(p) = resume {
        require(p, "checkpoint", "pass an existing --resume file")?;
    }
    let (corpus, hash) = load_corpus(cfg)?;
    let settings = cfg.train_settings();
    let mut trainer = match resume {
        Some(p) => {
            let ck = read_checkpoint(p)?;
            if ck.model.config != cfg.model {
                return Err(RunError::Missing(format!("checkpoint {} was trained with a different [model] section", p.display())));
            }
            Trainer::from_checkpoint(ck, cfg.optimizer.clone())
        }
        None => Trainer::new(Model::new(cfg.model.clone())?, cfg.optimizer.clone()),
    };
    if trainer.model.config.vocab_size != corpus.vocab.len() {
        return Err(TrainError::VocabMismatch { model: trainer.model.config.vocab_size, corpus: corpus.vocab.len() }.into());
    }
    let dir = train_dir(cfg);
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    save_config(cfg)?;
    let info = RunInfo {
        seed: cfg.seed,
        mode: cfg.mode.to_string(),
        corpus_manifest_sha256: hash,
        param_count: trainer.model.param_count(),
    };
    write_file(&dir.join("run.json"), serde_json::to_string_pretty(&info).expect("serialises") + "\n")?;

    let start_epoch = trainer.epoch as u64;
    let log_path = dir.join("train_log.csv");
    let geo_path = dir.join("geometry.csv");
    let mut log = read_rows_until(&log_path, TRAIN_LOG_HEADER, |l| leading_number(l) <= start_epoch)?;
    let mut geo = read_rows_until(&geo_path, GEOMETRY_CSV_HEADER, |l| leading_number(l) <= trainer.step)?;
    if trainer.epoch == 0 {
        let g = geometry_of(&trainer.model, &corpus.vocab, 0, cfg)?;
        geo = format!("{GEOMETRY_CSV_HEADER}\n{}\n", g.csv_row());
        write_checkpoint(&ckpt_dir.join("epoch-000.ckpt"), &trainer.checkpoint())?;
    }
    write_file(&log_path, &log)?;
    write_file(&geo_path, &geo)?;
    while trainer.epoch < cfg.optimizer.epochs {
        let entry = trainer.run_epoch(&corpus.train, &corpus.vocab, &settings)?;
        progress(&entry);
        log.push_str(&entry.csv_row());
        log.push('\n');
        write_file(&log_path, &log)?;
        if trainer.epoch % cfg.analysis.snapshot_every == 0 || trainer.epoch == cfg.optimizer.epochs {
            let g = geometry_of(&trainer.model, &corpus.vocab, trainer.step, cfg)?;
            geo.push_str(&g.csv_row());
            geo.push('\n');
            write_file(&geo_path, &geo)?;
        }
        write_checkpoint(&ckpt_dir.join(format!("epoch-{:03}.ckpt", trainer.epoch)), &trainer.checkpoint())?;
    }
    write_checkpoint(&dir.join("final.ckpt"), &trainer.checkpoint())?;
    Ok(trainer)
}

/// Decodes both test splits and scores them.
pub fn evaluate_model(
    model: &Model,
    corpus: &Corpus,
    cfg: &RunConfig,
    lm: Option<&BigramLm>,
) -> Result<(EvalReport, Vec<crate::decode::DecodedRecord>, Vec<crate::decode::DecodedRecord>), RunError> {
    let mono = decode_all(model, &corpus.vocab, &corpus.test_mono, &cfg.decode, lm)?;
    let cs = decode_all(model, &corpus.vocab, &corpus.test_cs, &cfg.decode, lm)?;
    let hyps: BTreeMap<String, Vec<usize>> = mono.iter().chain(&cs).map(|r| (r.id.clone(), r.tokens.clone())).collect();
    let mut refs = corpus.test_mono.clone();
    refs.extend(corpus.test_cs.iter().cloned());
    Ok((evaluate(&refs, &hyps), mono, cs))
}

/// `eval`: decodes `test_mono` and `test_cs` with `checkpoint` and writes the
/// decoded files and the mono / cs / all report.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, lm: Option<&Path>) -> Result<EvalReport, RunError> {
    require(checkpoint, "checkpoint", "train first or pass --checkpoint")?;
    if let Some(p) = lm {
        require(p, "language model", "run train-lm first")?;
    }
    let (corpus, _) = load_corpus(cfg)?;
    let ck = read_checkpoint(checkpoint)?;
    if ck.model.config.vocab_size != corpus.vocab.len() {
        return Err(DecodeError::VocabMismatch { expected: corpus.vocab.len(), got: ck.model.config.vocab_size }.into());
    }
    let lm = lm.map(BigramLm::load).transpose()?;
    let (report, mono, cs) = evaluate_model(&ck.model, &corpus, cfg, lm.as_ref())?;
    let dir = cfg.output_dir.join("eval");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write_decoded(&dir.join("decoded_test_mono.jsonl"), &mono)?;
    write_decoded(&dir.join("decoded_test_cs.jsonl"), &cs)?;
    write_file(&dir.join("report.txt"), report.to_table())?;
    write_file(&dir.join("report.json"), report.to_json())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub checkpoint_epoch: usize,
    pub geometry: GeometryReport,
    pub explained_variance: [f64; 2],
    pub total_variance: f64,
    /// PC-space centroid distance over mean within-language spread.
    pub pc_separation: Option<f64>,
}

/// `analyze`: PCA scatter (SVG + CSV) and geometry report of a checkpoint.
pub fn analyze(cfg: &RunConfig, checkpoint: &Path) -> Result<(AnalysisReport, PathBuf), RunError> {
    require(checkpoint, "checkpoint", "train first or pass --checkpoint")?;
    let dir = corpus_dir(cfg);
    require(&dir.join(MANIFEST_FILE), "corpus manifest", "run gen-data first")?;
    let manifest = read_manifest(&dir)?;
    let vocab = Vocabulary::from_tokens(manifest.vocabulary).map_err(CorpusError::from)?;
    let ck: Checkpoint = read_checkpoint(checkpoint)?;
    let before = ck.model.checksum();
    let snap = EmbeddingSnapshot::new(ck.step, ck.model.embeddings().clone(), vocab.clone())?;
    let geometry = geometry_report(&snap, cfg.jitter)?;
    let lexical: Vec<Vec<f64>> = vocab.lexical_ids().into_iter().map(|id| snap.rows.row(id).to_vec()).collect();
    let pca = pca_2d(&Tensor::from_rows(&lexical).expect("rows share the embedding width"))?;
    let stem = checkpoint.file_stem().map_or_else(|| "checkpoint".into(), |s| s.to_string_lossy().into_owned());
    let out = cfg.output_dir.join("analyze").join(&stem);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let title = format!("output token embeddings, {} (epoch {})", cfg.mode, ck.epoch);
    let points = emit_scatter(&snap, &pca, &out.join("scatter"), &title)?;
    let report = AnalysisReport {
        checkpoint_epoch: ck.epoch,
        geometry,
        explained_variance: pca.explained,
        total_variance: pca.total_variance,
        pc_separation: pc_separation(&points),
    };
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report).expect("serialises") + "\n")?;
    debug_assert_eq!(before, ck.model.checksum());
    Ok((report, out))
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub weight: f64,
    pub result: Result<EvalReport, String>,
    pub output_dir: PathBuf,
}

pub const SWEEP_CSV_HEADER: &str = "weight,mono_mer,cs_mer,all_mer,status";

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for p in points {
        match &p.result {
            Ok(r) => s.push_str(&format!("{},{},{},{},ok\n", p.weight, r.mono.error_rate, r.cs.error_rate, r.all.error_rate)),
            Err(e) => s.push_str(&format!("{},,,,\"error: {}\"\n", p.weight, e.replace('"', "'"))),
        }
    }
    s
}

/// Directory name of one sweep point.
pub fn sweep_point_dir(cfg: &RunConfig, weight: f64) -> PathBuf {
    cfg.output_dir.join("sweep").join(format!("alpha-{weight}"))
}

/// `sweep`: trains and evaluates one run per constraint weight `α` in
/// `grid`, all sharing the configured seed and corpus. A failing point is
/// recorded and the sweep continues.
pub fn sweep(cfg: &RunConfig, grid: &[f64], progress: &mut dyn FnMut(&str)) -> Result<Vec<SweepPoint>, RunError> {
    if grid.is_empty() {
        return Err(ConfigError::Field { field: "grid".into(), msg: "must not be empty".into() }.into());
    }
    if let Some(w) = grid.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(ConfigError::Field { field: "grid".into(), msg: format!("weight {w} is outside [0, 1]") }.into());
    }
    require(&corpus_dir(cfg).join(MANIFEST_FILE), "corpus manifest", "run gen-data first")?;
    let (corpus, _) = load_corpus(cfg)?;
    let mut points = Vec::new();
    for &w in grid {
        let mut point_cfg = cfg.clone();
        point_cfg.weights.alpha = Some(w);
        point_cfg.output_dir = sweep_point_dir(cfg, w);
        let run = || -> Result<EvalReport, RunError> {
            point_cfg.validate()?;
            let src = corpus_dir(cfg);
            let dst = corpus_dir(&point_cfg);
            copy_dir(&src, &dst)?;
            let trainer = train(&point_cfg, None, &mut |_| {})?;
            let (report, _, _) = evaluate_model(&trainer.model, &corpus, &point_cfg, None)?;
            let dir = point_cfg.output_dir.join("eval");
            write_file(&dir.join("report.txt"), report.to_table())?;
            write_file(&dir.join("report.json"), report.to_json())?;
            Ok(report)
        };
        let result = run().map_err(|e| e.to_string());
        progress(&match &result {
            Ok(r) => format!("alpha={w}: mono {:.4} cs {:.4} all {:.4}", r.mono.error_rate, r.cs.error_rate, r.all.error_rate),
            Err(e) => format!("alpha={w}: failed: {e}"),
        });
        points.push(SweepPoint { weight: w, result, output_dir: point_cfg.output_dir.clone() });
    }
    let dir = cfg.output_dir.join("sweep");
    write_file(&dir.join("sweep.csv"), sweep_csv(&points))?;
    let series = |name: &str, f: fn(&EvalReport) -> f64| Series {
        name: name.into(),
        points: points.iter().filter_map(|p| p.result.as_ref().ok().map(|r| (p.weight, 100.0 * f(r)))).collect(),
    };
    let svg = line_plot_svg(
        &[series("mono", |r| r.mono.error_rate), series("cs", |r| r.cs.error_rate), series("all", |r| r.all.error_rate)],
        &format!("{} constraint weight sweep", cfg.mode),
        "alpha",
        "token error rate (%)",
    );
    write_file(&dir.join("sweep.svg"), svg)?;
    Ok(points)
}

fn copy_dir(src: &Path, dst: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dst).map_err(io_err(dst))?;
    let mut entries: Vec<_> = fs::read_dir(src).map_err(io_err(src))?.collect::<Result<_, _>>().map_err(io_err(src))?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let to = dst.join(e.file_name());
        fs::copy(e.path(), &to).map_err(io_err(&to))?;
    }
    Ok(())
}
