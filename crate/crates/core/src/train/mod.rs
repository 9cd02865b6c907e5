//! Mini-batch training of the hybrid model under the fused objectives.

mod optimizer;

pub use optimizer::{global_norm, Optimizer, OptimizerConfig, OptimizerKind};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::constraint_terms;
use crate::autodiff::{Graph, GraphError, Tensor};
use crate::corpus::{Utterance, Vocabulary, BLANK, EOS};
use crate::losses::{attention_loss, ctc_loss, fusion_coefficients, Jitter, LossError, LossWeights, Mode};
use crate::model::{
    encode, prepare_attention, teacher_forced_logits, ctc_log_probs, Checkpoint, Model, ModelError, Params,
    EMBEDDING_PARAM,
};
use crate::rng::Prng;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {field}: {msg}")]
    Config { field: &'static str, msg: String },
    #[error("utterance {id}: {source}")]
    Utterance { id: String, source: LossError },
    #[error(
        "training diverged at epoch {epoch}, step {step}: {detail}; the last good checkpoint was kept. \
         Ill-conditioned embedding covariances are the usual cause: raise the covariance jitter"
    )]
    Diverged { epoch: usize, step: u64, detail: String },
    #[error("model vocabulary has {model} ids but the corpus has {corpus}")]
    VocabMismatch { model: usize, corpus: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl From<GraphError> for TrainError {
    fn from(e: GraphError) -> Self {
        TrainError::Loss(LossError::Graph(e))
    }
}

/// Everything that shapes the objective and the update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub weights: LossWeights,
    pub mode: Mode,
    pub jitter: Jitter,
    pub optimizer: OptimizerConfig,
    /// Seed of the batch order.
    pub seed: u64,
}

/// Mean component losses over the batches of one epoch. Constraint values
/// are always computed (as diagnostics when their weight is zero).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_ctc: f64,
    pub l_att: f64,
    pub l_jsd: f64,
    pub l_cd: f64,
    pub total: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,l_ctc,l_att,l_jsd,l_cd,total";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.epoch, self.l_ctc, self.l_att, self.l_jsd, self.l_cd, self.total)
    }
}

/// Utterance indices grouped into length-bucketed batches: sorted by frame
/// count (ties by id), cut into `batch_size` chunks, chunk order shuffled by
/// a generator derived from `(seed, epoch)`.
pub fn batches(utts: &[Utterance], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..utts.len()).collect();
    order.sort_by(|&a, &b| utts[a].frames().cmp(&utts[b].frames()).then_with(|| utts[a].id.cmp(&utts[b].id)));
    let mut chunks: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    Prng::derive(seed, &format!("epoch-{epoch}")).shuffle(&mut chunks);
    chunks
}

/// Component values of one batch objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BatchLosses {
    pub ctc: f64,
    pub att: f64,
    pub jsd: f64,
    pub cd: f64,
    pub total: f64,
}

fn accumulate(into: &mut Params, grads: Params) {
    for (name, g) in grads {
        match into.get_mut(&name) {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            None => {
                into.insert(name, g);
            }
        }
    }
}

fn collect_grads(g: &mut Graph, loss: crate::autodiff::Var) -> Result<Params, TrainError> {
    let grads = g.backward(loss)?;
    Ok(grads
        .param_names()
        .filter_map(|name| grads.param(name).map(|t| (name.to_string(), t.clone())))
        .collect())
}

/// Per-utterance `(ctc, att)` losses with the gradient of
/// `(c_ctc·ctc + c_att·att) / batch`.
fn utterance_grads(model: &Model, utt: &Utterance, coef: [f64; 2], batch: f64) -> Result<(f64, f64, Params), TrainError> {
    let wrap = |source: LossError| TrainError::Utterance { id: utt.id.clone(), source };
    let mut g = Graph::new();
    let b = model.bind(&mut g, true);
    let enc = encode(&mut g, &b, &model.config, &utt.features)?;
    let lp = ctc_log_probs(&mut g, &b, &enc)?;
    let ctc = ctc_loss(&mut g, lp, &utt.transcript, BLANK).map_err(wrap)?;
    let mem = prepare_attention(&mut g, &b, enc)?;
    let logits = teacher_forced_logits(&mut g, &b, &mem, &utt.transcript)?;
    let mut target = utt.transcript.clone();
    target.push(EOS);
    let att = attention_loss(&mut g, &logits, &target).map_err(wrap)?;
    let (vc, va) = (g.scalar_value(ctc), g.scalar_value(att));
    let mut terms = Vec::new();
    for (v, c) in [(ctc, coef[0]), (att, coef[1])] {
        if c != 0.0 {
            terms.push(g.scale(v, c / batch));
        }
    }
    let grads = match terms.as_slice() {
        [] => Params::new(),
        [one] => collect_grads(&mut g, *one)?,
        [a, b] => {
            let sum = g.add(*a, *b)?;
            collect_grads(&mut g, sum)?
        }
        _ => unreachable!(),
    };
    Ok((vc, va, grads))
}

/// Constraint values and the gradient of `c_jsd·jsd + c_cd·cd` with respect
/// to the embedding matrix.
fn constraint_grads(model: &Model, vocab: &Vocabulary, jitter: Jitter, coef: [f64; 2]) -> Result<(f64, f64, Params), TrainError> {
    let mut g = Graph::new();
    let e = g.param(EMBEDDING_PARAM, model.params[EMBEDDING_PARAM].clone());
    let terms = constraint_terms(&mut g, e, vocab, jitter, true, true)?;
    let (jsd, cd) = (terms.jsd.expect("requested"), terms.cd.expect("requested"));
    let (vj, vc) = (g.scalar_value(jsd), g.scalar_value(cd));
    let mut parts = Vec::new();
    for (v, c) in [(jsd, coef[0]), (cd, coef[1])] {
        if c != 0.0 {
            parts.push(g.scale(v, c));
        }
    }
    let grads = match parts.as_slice() {
        [] => Params::new(),
        [one] => collect_grads(&mut g, *one)?,
        [a, b] => {
            let sum = g.add(*a, *b)?;
            collect_grads(&mut g, sum)?
        }
        _ => unreachable!(),
    };
    Ok((vj, vc, grads))
}

/// Objective value and summed gradient for one batch. Utterances are
/// processed in parallel and their gradients summed in batch order, so the
/// result does not depend on thread scheduling.
pub fn batch_gradients(
    model: &Model,
    vocab: &Vocabulary,
    utts: &[&Utterance],
    settings: &TrainSettings,
) -> Result<(BatchLosses, Params), TrainError> {
    let c = fusion_coefficients(&settings.weights, settings.mode);
    let n = utts.len() as f64;
    let per_utt: Vec<_> = utts
        .par_iter()
        .map(|u| utterance_grads(model, u, [c[0], c[1]], n))
        .collect::<Result<Vec<_>, _>>()?;
    let mut grads = Params::new();
    let (mut ctc, mut att) = (0.0, 0.0);
    for (vc, va, g) in per_utt {
        ctc += vc;
        att += va;
        accumulate(&mut grads, g);
    }
    ctc /= n;
    att /= n;
    let (jsd, cd, cg) = constraint_grads(model, vocab, settings.jitter, [c[2], c[3]])?;
    accumulate(&mut grads, cg);
    let total = [ctc, att, jsd, cd].iter().zip(c).filter(|(_, c)| *c != 0.0).map(|(l, c)| c * l).sum();
    Ok((BatchLosses { ctc, att, jsd, cd, total }, grads))
}

/// Model plus optimizer plus position in the schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: Model,
    pub optimizer: Optimizer,
    /// Completed epochs.
    pub epoch: usize,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, optimizer: OptimizerConfig) -> Self {
        Trainer { model, optimizer: Optimizer::new(optimizer), epoch: 0, step: 0 }
    }

    pub fn from_checkpoint(ck: Checkpoint, optimizer: OptimizerConfig) -> Self {
        Trainer { model: ck.model, optimizer: Optimizer::with_state(optimizer, ck.extra), epoch: ck.epoch, step: ck.step }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            epoch: self.epoch,
            step: self.step,
            extra: self.optimizer.state().clone(),
        }
    }

    /// Runs one epoch. On failure the parameters are left as they were
    /// before the failing step.
    pub fn run_epoch(&mut self, train: &[Utterance], vocab: &Vocabulary, settings: &TrainSettings) -> Result<EpochLog, TrainError> {
        if self.model.config.vocab_size != vocab.len() {
            return Err(TrainError::VocabMismatch { model: self.model.config.vocab_size, corpus: vocab.len() });
        }
        let epoch = self.epoch + 1;
        let plan = batches(train, settings.optimizer.batch_size, settings.seed, epoch);
        let mut sums = BatchLosses::default();
        for batch in &plan {
            let utts: Vec<&Utterance> = batch.iter().map(|&i| &train[i]).collect();
            let (losses, grads) = batch_gradients(&self.model, vocab, &utts, settings).map_err(|e| match e {
                TrainError::Loss(LossError::IllConditioned { .. }) => TrainError::Diverged {
                    epoch,
                    step: self.step,
                    detail: e.to_string(),
                },
                other => other,
            })?;
            let finite = losses.total.is_finite() && grads.values().all(Tensor::all_finite);
            if !finite {
                return Err(TrainError::Diverged { epoch, step: self.step, detail: "non-finite loss or gradient".into() });
            }
            let mut next = self.model.params.clone();
            self.optimizer.step(&mut next, &grads);
            if !next.values().all(Tensor::all_finite) {
                return Err(TrainError::Diverged { epoch, step: self.step, detail: "non-finite parameters".into() });
            }
            self.model.params = next;
            self.step += 1;
            sums.ctc += losses.ctc;
            sums.att += losses.att;
            sums.jsd += losses.jsd;
            sums.cd += losses.cd;
            sums.total += losses.total;
        }
        self.epoch = epoch;
        let k = plan.len().max(1) as f64;
        Ok(EpochLog {
            epoch,
            l_ctc: sums.ctc / k,
            l_att: sums.att / k,
            l_jsd: sums.jsd / k,
            l_cd: sums.cd / k,
            total: sums.total / k,
        })
    }
}

/// Fused objective of `model` on `utts` as one batch, no update.
pub fn evaluate_objective(model: &Model, vocab: &Vocabulary, utts: &[Utterance], settings: &TrainSettings) -> Result<BatchLosses, TrainError> {
    let refs: Vec<&Utterance> = utts.iter().collect();
    Ok(batch_gradients(model, vocab, &refs, settings)?.0)
}
