use super::LossError;
use crate::autodiff::{Graph, Var};

/// Teacher-forced sequence cross-entropy `−Σₙ log softmax(logitsₙ)[yₙ]`.
///
/// `logits[n]` must be the decoder output after consuming `target[..n]`
/// (preceded by the start token); `target` includes the end token.
pub fn attention_loss(g: &mut Graph, logits: &[Var], target: &[usize]) -> Result<Var, LossError> {
    if logits.len() != target.len() || logits.is_empty() {
        return Err(LossError::LengthMismatch { logits: logits.len(), targets: target.len() });
    }
    let mut picked = Vec::with_capacity(target.len());
    for (&step, &token) in logits.iter().zip(target) {
        let size = g.value(step).len();
        if token >= size {
            return Err(LossError::TokenOutOfRange { token, size });
        }
        let lp = g.log_softmax(step);
        picked.push(g.select(lp, token)?);
    }
    let mut total = picked[0];
    for &p in &picked[1..] {
        total = g.add(total, p)?;
    }
    Ok(g.scale(total, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn uniform_logits_give_n_log_v() {
        let mut g = Graph::new();
        let steps: Vec<Var> = (0..4).map(|_| g.constant(Tensor::vector(&[0.5; 7]))).collect();
        let loss = attention_loss(&mut g, &steps, &[1, 2, 3, 6]).unwrap();
        assert!((g.scalar_value(loss) - 4.0 * 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let mut g = Graph::new();
        let mut logits = vec![0.0; 5];
        logits[2] = 60.0;
        let step = g.constant(Tensor::vector(&logits));
        let loss = attention_loss(&mut g, &[step], &[2]).unwrap();
        assert!(g.scalar_value(loss) < 1e-20);
    }

    #[test]
    fn length_mismatch() {
        let mut g = Graph::new();
        let step = g.constant(Tensor::vector(&[0.0; 3]));
        assert!(matches!(
            attention_loss(&mut g, &[step], &[1, 2]),
            Err(LossError::LengthMismatch { logits: 1, targets: 2 })
        ));
    }
}
