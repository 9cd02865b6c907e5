use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{BigramLm, DecodeError};
use crate::autodiff::{Graph, Tensor};
use crate::corpus::{TokenId, Vocabulary, BLANK, EOS, SOS};
use crate::losses::ctc_neg_log_likelihood;
use crate::model::{ctc_log_probs, decode_step, encode, initial_state, prepare_attention, DecoderState, Model};

/// One ranked decoding result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Output tokens without the start and end tokens.
    pub tokens: Vec<TokenId>,
    /// `Σ log P_att`, including the end token when finished.
    pub att_score: f64,
    /// `Σ log P_lm` (0 without a language model).
    pub lm_score: f64,
    /// Ranking score: `att_score + lm_weight · lm_score` after search,
    /// replaced by the joint score after CTC rescoring.
    pub score: f64,
    /// `false` when the length limit forced the hypothesis to stop.
    pub finished: bool,
}

/// Descending score, ties broken by the lexicographically smaller sequence.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

struct Live {
    tokens: Vec<TokenId>,
    att: f64,
    lm: f64,
    score: f64,
    state: DecoderState,
}

/// Beam search over the attention decoder with optional shallow fusion.
///
/// Expansions consider every lexical token and the end token. At each step
/// the best `beam` expansions survive; those ending in the end token leave
/// the beam as finished hypotheses. Search stops once no live hypothesis can
/// beat the `beam`-th finished one (scores never increase), when the beam
/// empties, or at `max_len` tokens, where live hypotheses are returned
/// unfinished.
pub fn beam_search(
    model: &Model,
    vocab: &Vocabulary,
    features: &Tensor,
    beam: usize,
    max_len: usize,
    lm: Option<(&BigramLm, f64)>,
) -> Result<Vec<Hypothesis>, DecodeError> {
    if beam == 0 || max_len == 0 {
        return Err(DecodeError::Config("beam and max_len must be at least 1".into()));
    }
    if let Some((l, w)) = lm {
        if l.vocab_size() != vocab.len() {
            return Err(DecodeError::VocabMismatch { expected: vocab.len(), got: l.vocab_size() });
        }
        if !(w.is_finite() && w >= 0.0) {
            return Err(DecodeError::Config(format!("lm_weight must be finite and non-negative, got {w}")));
        }
    }
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let enc = encode(&mut g, &b, &model.config, features)?;
    let mem = prepare_attention(&mut g, &b, enc)?;
    let start = initial_state(&mut g, &b, &mem);
    let candidates: Vec<TokenId> = (0..vocab.len()).filter(|&t| t != BLANK && t != SOS).collect();

    let mut live = vec![Live { tokens: Vec::new(), att: 0.0, lm: 0.0, score: 0.0, state: start }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut expansions: Vec<(usize, TokenId, f64, f64, f64, DecoderState)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let prev = h.tokens.last().copied().unwrap_or(SOS);
            let (next, logits) = decode_step(&mut g, &b, &h.state, &mem, prev)?;
            let lp = g.log_softmax(logits);
            let lp = g.value(lp).data().to_vec();
            for &t in &candidates {
                let att = h.att + lp[t];
                let (lm_total, score) = match lm {
                    None => (0.0, att),
                    Some((l, w)) => {
                        let lm_total = h.lm + l.log_prob(prev, t);
                        (lm_total, att + w * lm_total)
                    }
                };
                expansions.push((i, t, att, lm_total, score, next.clone()));
            }
        }
        expansions.sort_by(|a, b| {
            b.4.total_cmp(&a.4)
                .then_with(|| live[a.0].tokens.cmp(&live[b.0].tokens))
                .then_with(|| a.1.cmp(&b.1))
        });
        expansions.truncate(beam);
        let mut next_live = Vec::new();
        for (i, t, att, lm_total, score, state) in expansions {
            let mut tokens = live[i].tokens.clone();
            if t == EOS {
                finished.push(Hypothesis { tokens, att_score: att, lm_score: lm_total, score, finished: true });
            } else {
                tokens.push(t);
                next_live.push(Live { tokens, att, lm: lm_total, score, state });
            }
        }
        live = next_live;
        finished.sort_by(rank);
        let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
        if live.is_empty() || (finished.len() >= beam && finished[beam - 1].score >= best_live) {
            live.clear();
            break;
        }
    }
    finished.extend(live.into_iter().map(|h| Hypothesis {
        tokens: h.tokens,
        att_score: h.att,
        lm_score: h.lm,
        score: h.score,
        finished: false,
    }));
    finished.sort_by(rank);
    finished.truncate(beam);
    Ok(finished)
}

/// Argmax decoding: the most probable token at every step (lowest id on
/// ties), stopping at the end token or `max_len` tokens.
pub fn greedy_decode(model: &Model, vocab: &Vocabulary, features: &Tensor, max_len: usize) -> Result<Hypothesis, DecodeError> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let enc = encode(&mut g, &b, &model.config, features)?;
    let mem = prepare_attention(&mut g, &b, enc)?;
    let mut state = initial_state(&mut g, &b, &mem);
    let mut tokens = Vec::new();
    let mut att = 0.0;
    for _ in 0..max_len {
        let prev = tokens.last().copied().unwrap_or(SOS);
        let (next, logits) = decode_step(&mut g, &b, &state, &mem, prev)?;
        let lp = g.log_softmax(logits);
        let lp = g.value(lp).data();
        let mut best = EOS;
        for t in (0..vocab.len()).filter(|&t| t != BLANK && t != SOS) {
            if lp[t] > lp[best] || (lp[t] == lp[best] && t < best) {
                best = t;
            }
        }
        att += lp[best];
        if best == EOS {
            return Ok(Hypothesis { tokens, att_score: att, lm_score: 0.0, score: att, finished: true });
        }
        tokens.push(best);
        state = next;
    }
    Ok(Hypothesis { tokens, att_score: att, lm_score: 0.0, score: att, finished: false })
}

/// CTC log-probabilities of the encoder states for `features`.
pub fn ctc_posteriors(model: &Model, features: &Tensor) -> Result<Tensor, DecodeError> {
    let mut g = Graph::new();
    let b = model.bind(&mut g, false);
    let enc = encode(&mut g, &b, &model.config, features)?;
    let lp = ctc_log_probs(&mut g, &b, &enc)?;
    Ok(g.value(lp).clone())
}

/// Whole-hypothesis joint rescoring:
/// `score ← (1−w)·score + w·log P_CTC(tokens)`. A hypothesis the CTC
/// lattice cannot produce gets `−∞`. `w = 0` leaves everything untouched.
pub fn ctc_rescore(hyps: &mut [Hypothesis], ctc_log_probs: &Tensor, weight: f64) -> Result<(), DecodeError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(DecodeError::Config(format!("ctc rescore weight must lie in [0, 1], got {weight}")));
    }
    if weight == 0.0 {
        return Ok(());
    }
    for h in hyps.iter_mut() {
        h.score = match ctc_neg_log_likelihood(ctc_log_probs, &h.tokens, BLANK) {
            Ok(nll) if nll.is_finite() => (1.0 - weight) * h.score - weight * nll,
            _ => f64::NEG_INFINITY,
        };
    }
    hyps.sort_by(rank);
    Ok(())
}
