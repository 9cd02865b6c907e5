use std::sync::Arc;

use super::LossError;
use crate::autodiff::{CustomOp, Graph, Tensor, Var};

/// Minimum number of frames needed to align `target`: one per token plus one
/// blank between each pair of equal neighbours.
pub fn ctc_required_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

pub fn ctc_feasible(target: &[usize], frames: usize) -> bool {
    ctc_required_frames(target) <= frames
}

fn logadd(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn validate(log_probs: &Tensor, target: &[usize], blank: usize) -> Result<(), LossError> {
    let (frames, width) = (log_probs.rows(), log_probs.cols());
    if log_probs.ndim() != 2 {
        return Err(LossError::Graph(crate::autodiff::GraphError::Invalid {
            op: "ctc_loss",
            msg: format!("expected a frames × classes matrix, got {:?}", log_probs.shape()),
        }));
    }
    if blank >= width {
        return Err(LossError::TokenOutOfRange { token: blank, size: width });
    }
    for &t in target {
        if t == blank {
            return Err(LossError::BlankInTarget(blank));
        }
        if t >= width {
            return Err(LossError::TokenOutOfRange { token: t, size: width });
        }
    }
    let required = ctc_required_frames(target);
    if required > frames {
        return Err(LossError::CtcInfeasible { target_len: target.len(), required, frames });
    }
    Ok(())
}

/// Blank-augmented label sequence `- y1 - y2 ... yN -`.
fn extended(target: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * target.len() + 1);
    ext.push(blank);
    for &t in target {
        ext.push(t);
        ext.push(blank);
    }
    ext
}

fn can_skip(ext: &[usize], s: usize, blank: usize) -> bool {
    s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]
}

/// Log-space forward variables: `alpha[t][s]` is the log probability of all
/// prefixes of length `t+1` ending in extended state `s`, emissions included.
fn forward(log_probs: &Tensor, ext: &[usize], blank: usize) -> Vec<Vec<f64>> {
    let (frames, states) = (log_probs.rows(), ext.len());
    let mut alpha = vec![vec![f64::NEG_INFINITY; states]; frames];
    alpha[0][0] = log_probs.at(0, ext[0]);
    if states > 1 {
        alpha[0][1] = log_probs.at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[t - 1][s];
            if s >= 1 {
                acc = logadd(acc, alpha[t - 1][s - 1]);
            }
            if can_skip(ext, s, blank) {
                acc = logadd(acc, alpha[t - 1][s - 2]);
            }
            if acc != f64::NEG_INFINITY {
                alpha[t][s] = acc + log_probs.at(t, ext[s]);
            }
        }
    }
    alpha
}

/// Log-space backward variables: `beta[t][s]` is the log probability of
/// emitting the remainder after frame `t`, given state `s` at `t`
/// (frame `t`'s emission excluded).
fn backward(log_probs: &Tensor, ext: &[usize], blank: usize) -> Vec<Vec<f64>> {
    let (frames, states) = (log_probs.rows(), ext.len());
    let mut beta = vec![vec![f64::NEG_INFINITY; states]; frames];
    beta[frames - 1][states - 1] = 0.0;
    if states > 1 {
        beta[frames - 1][states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let mut acc = beta[t + 1][s] + log_probs.at(t + 1, ext[s]);
            if s + 1 < states {
                acc = logadd(acc, beta[t + 1][s + 1] + log_probs.at(t + 1, ext[s + 1]));
            }
            if s + 2 < states && can_skip(ext, s + 2, blank) {
                acc = logadd(acc, beta[t + 1][s + 2] + log_probs.at(t + 1, ext[s + 2]));
            }
            beta[t][s] = acc;
        }
    }
    beta
}

fn total_log_prob(alpha: &[Vec<f64>]) -> f64 {
    let last = alpha.last().expect("at least one frame");
    let s = last.len();
    if s > 1 {
        logadd(last[s - 1], last[s - 2])
    } else {
        last[0]
    }
}

/// `−log P_CTC(target | log_probs)` computed by the forward recursion.
pub fn ctc_neg_log_likelihood(log_probs: &Tensor, target: &[usize], blank: usize) -> Result<f64, LossError> {
    validate(log_probs, target, blank)?;
    let ext = extended(target, blank);
    let alpha = forward(log_probs, &ext, blank);
    Ok(-total_log_prob(&alpha))
}

/// Graph node for the CTC loss; its gradient with respect to each
/// log-probability is minus the posterior occupancy of that (frame, class).
#[derive(Debug)]
pub struct CtcOp {
    target: Arc<[usize]>,
    blank: usize,
}

impl CustomOp for CtcOp {
    fn name(&self) -> &'static str {
        "ctc_loss"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor> {
        let lp = inputs[0];
        let ext = extended(&self.target, self.blank);
        let alpha = forward(lp, &ext, self.blank);
        let beta = backward(lp, &ext, self.blank);
        let log_p = -output.item();
        let g = grad.item();
        let width = lp.cols();
        let mut out = vec![0.0; lp.len()];
        for t in 0..lp.rows() {
            for (s, &label) in ext.iter().enumerate() {
                let occ = alpha[t][s] + beta[t][s] - log_p;
                if occ != f64::NEG_INFINITY {
                    out[t * width + label] -= g * occ.exp();
                }
            }
        }
        vec![Tensor::new(lp.shape().to_vec(), out).expect("same shape as input")]
    }
}

/// CTC loss node over a `frames × classes` log-probability matrix.
pub fn ctc_loss(g: &mut Graph, log_probs: Var, target: &[usize], blank: usize) -> Result<Var, LossError> {
    let value = ctc_neg_log_likelihood(g.value(log_probs), target, blank)?;
    let op = CtcOp { target: target.into(), blank };
    Ok(g.custom(Box::new(op), &[log_probs], Tensor::scalar(value)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(frames: usize, classes: usize) -> Tensor {
        Tensor::filled(&[frames, classes], -(classes as f64).ln())
    }

    #[test]
    fn single_frame_single_token() {
        let p: f64 = 0.7;
        let lp = Tensor::matrix(1, 2, vec![(0.3f64).ln(), p.ln()]).unwrap();
        let loss = ctc_neg_log_likelihood(&lp, &[1], 0).unwrap();
        assert!((loss + p.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_two_frames_one_token() {
        // Paths for [a] over two frames: aa, a-, -a → 3 · (1/3)².
        let loss = ctc_neg_log_likelihood(&uniform(2, 3), &[1], 0).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((loss - 1.0986).abs() < 1e-4);
    }

    #[test]
    fn infeasible_target_is_an_error() {
        let err = ctc_neg_log_likelihood(&uniform(2, 3), &[1, 1], 0).unwrap_err();
        assert_eq!(err, LossError::CtcInfeasible { target_len: 2, required: 3, frames: 2 });
        assert!(ctc_neg_log_likelihood(&uniform(3, 3), &[1, 1], 0).is_ok());
    }

    #[test]
    fn blank_in_target_rejected() {
        assert!(matches!(ctc_neg_log_likelihood(&uniform(3, 3), &[0], 0), Err(LossError::BlankInTarget(0))));
    }

    #[test]
    fn required_frames_counts_repeats() {
        assert_eq!(ctc_required_frames(&[]), 0);
        assert_eq!(ctc_required_frames(&[1, 2, 2, 3, 3, 3]), 9);
    }
}
