use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use csasr::config::{ConfigError, RunConfig};
use csasr::losses::Mode;
use csasr::runner::{self, RunError};

/// Code-switching ASR laboratory: synthetic corpus, constrained hybrid
/// CTC/attention training, evaluation, sweeps and embedding analysis.
#[derive(Parser)]
#[command(name = "csasr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set optimizer.epochs=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for corpus, model initialisation and batch order.
    #[arg(long)]
    seed: Option<u64>,
    /// Objective: baseline, cd_only, jsd_only or combined.
    #[arg(long)]
    mode: Option<Mode>,
    /// Root of the run directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and print split statistics.
    GenData(Common),
    /// Train the model, writing checkpoints and loss/geometry logs.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Decode the test splits and report mono / cs / all error rates.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/train/final.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Bigram LM for shallow fusion.
        #[arg(long)]
        lm: Option<PathBuf>,
        /// Shallow-fusion LM weight.
        #[arg(long)]
        lm_weight: Option<f64>,
        /// Beam width.
        #[arg(long)]
        beam: Option<usize>,
        /// CTC rescoring weight in [0, 1].
        #[arg(long)]
        ctc_weight: Option<f64>,
    },
    /// Train and evaluate once per constraint weight.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Constraint weights (alpha) to train and evaluate.
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.8,0.9,0.97,1.0")]
        grid: Vec<f64>,
    },
    /// PCA scatter and geometry report of a checkpoint.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<output_dir>/train/final.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the bigram LM used for shallow fusion.
    TrainLm(Common),
}

fn load_config(c: &Common, extra: &[String]) -> Result<RunConfig, RunError> {
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| ConfigError::Parse(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = c.set.clone();
    if let Some(m) = c.mode {
        overrides.push(format!("mode=\"{m}\""));
    }
    if let Some(d) = &c.output_dir {
        overrides.push(format!("output_dir={:?}", d.display().to_string()));
    }
    if let Some(e) = c.epochs {
        overrides.push(format!("optimizer.epochs={e}"));
    }
    if let Some(s) = c.seed {
        for key in ["seed", "corpus.seed", "model.seed"] {
            overrides.push(format!("{key}={s}"));
        }
    }
    overrides.extend_from_slice(extra);
    let (cfg, warnings) = RunConfig::from_toml(&text, &overrides)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn checkpoint_or_final(cfg: &RunConfig, p: Option<PathBuf>) -> PathBuf {
    p.unwrap_or_else(|| runner::final_checkpoint(cfg))
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = load_config(&c, &[])?;
            print!("{}", runner::gen_data(&cfg)?);
        }
        Command::Train { common, resume } => {
            let cfg = load_config(&common, &[])?;
            println!("epoch  l_ctc      l_att      l_jsd        l_cd      total");
            let trainer = runner::train(&cfg, resume.as_deref(), &mut |e| {
                println!("{:>5}  {:<9.4}  {:<9.4}  {:<11.4}  {:<8.4}  {:.4}", e.epoch, e.l_ctc, e.l_att, e.l_jsd, e.l_cd, e.total);
            })?;
            println!("final checkpoint: {} (epoch {})", runner::final_checkpoint(&cfg).display(), trainer.epoch);
        }
        Command::Eval { common, checkpoint, lm, lm_weight, beam, ctc_weight } => {
            let mut extra = Vec::new();
            if let Some(w) = lm_weight {
                extra.push(format!("decode.lm_weight={w:?}"));
            }
            if let Some(b) = beam {
                extra.push(format!("decode.beam={b}"));
            }
            if let Some(w) = ctc_weight {
                extra.push(format!("decode.ctc_rescore_weight={w:?}"));
            }
            let cfg = load_config(&common, &extra)?;
            let ck = checkpoint_or_final(&cfg, checkpoint);
            let report = runner::eval(&cfg, &ck, lm.as_deref())?;
            print!("{}", report.to_table());
        }
        Command::Sweep { common, grid } => {
            let cfg = load_config(&common, &[])?;
            let points = runner::sweep(&cfg, &grid, &mut |line| println!("{line}"))?;
            println!("sweep table: {}", cfg.output_dir.join("sweep/sweep.csv").display());
            if points.iter().any(|p| p.result.is_err()) {
                eprintln!("warning: some sweep points failed; see sweep.csv");
            }
        }
        Command::Analyze { common, checkpoint } => {
            let cfg = load_config(&common, &[])?;
            let ck = checkpoint_or_final(&cfg, checkpoint);
            let (r, dir) = runner::analyze(&cfg, &ck)?;
            println!("divergence          {}", r.geometry.divergence);
            println!("centroid cos. dist. {}", r.geometry.cd);
            println!("intra L1 / L2       {} / {}", r.geometry.intra_l1, r.geometry.intra_l2);
            if let Some(s) = r.pc_separation {
                println!("PC separation       {s}");
            }
            println!("outputs in {}", dir.display());
        }
        Command::TrainLm(c) => {
            let cfg = load_config(&c, &[])?;
            print!("{}", runner::train_lm(&cfg)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
