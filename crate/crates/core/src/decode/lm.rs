use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DecodeError;
use crate::corpus::{TokenId, Vocabulary, BLANK, EOS, SOS};

pub const LM_FORMAT: &str = "csasr-bigram/1";

/// Add-k smoothed bigram model over vocabulary ids. Every context row is a
/// distribution over the lexical tokens plus the end token; the blank and
/// start tokens are never predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    vocab_size: usize,
    k: f64,
    counts: Vec<u64>,
    log_probs: Vec<f64>,
}

/// On-disk form: raw counts plus `k`; probabilities are recomputed on load.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LmFile {
    format: String,
    vocab_size: usize,
    k: f64,
    counts: Vec<Vec<u64>>,
}

fn predictable(id: TokenId) -> bool {
    id != BLANK && id != SOS
}

impl BigramLm {
    /// Counts bigrams over `[SOS, t₁, …, t_N, EOS]` for every transcript.
    pub fn train(vocab: &Vocabulary, transcripts: &[Vec<TokenId>], k: f64) -> Result<BigramLm, DecodeError> {
        if transcripts.is_empty() {
            return Err(DecodeError::Lm("need at least one transcript".into()));
        }
        let v = vocab.len();
        let mut counts = vec![0u64; v * v];
        for t in transcripts {
            let mut prev = SOS;
            for &tok in t.iter().chain(std::iter::once(&EOS)) {
                if tok >= v || !predictable(tok) {
                    return Err(DecodeError::Lm(format!("transcript contains unusable token {tok}")));
                }
                counts[prev * v + tok] += 1;
                prev = tok;
            }
        }
        BigramLm::from_counts(v, k, counts)
    }

    fn from_counts(v: usize, k: f64, counts: Vec<u64>) -> Result<BigramLm, DecodeError> {
        if !(k.is_finite() && k > 0.0) {
            return Err(DecodeError::Lm(format!("smoothing k must be positive, got {k}")));
        }
        if v <= EOS + 1 || counts.len() != v * v {
            return Err(DecodeError::Lm("count table does not match vocabulary".into()));
        }
        let outcomes = (0..v).filter(|&t| predictable(t)).count() as f64;
        let mut log_probs = vec![f64::NEG_INFINITY; v * v];
        for prev in 0..v {
            let row = &counts[prev * v..(prev + 1) * v];
            let total: f64 = (0..v).filter(|&t| predictable(t)).map(|t| row[t] as f64).sum();
            let denom = (total + k * outcomes).ln();
            for next in (0..v).filter(|&t| predictable(t)) {
                log_probs[prev * v + next] = (row[next] as f64 + k).ln() - denom;
            }
        }
        Ok(BigramLm { vocab_size: v, k, counts, log_probs })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    /// `log P(next | prev)`; `−∞` for the blank and start tokens.
    pub fn log_prob(&self, prev: TokenId, next: TokenId) -> f64 {
        self.log_probs[prev * self.vocab_size + next]
    }

    /// Log probability of `[t₁ … t_N]` followed by the end token when
    /// `finished`.
    pub fn score(&self, tokens: &[TokenId], finished: bool) -> f64 {
        let mut prev = SOS;
        let mut total = 0.0;
        for &t in tokens {
            total += self.log_prob(prev, t);
            prev = t;
        }
        if finished {
            total += self.log_prob(prev, EOS);
        }
        total
    }

    pub fn to_json(&self) -> String {
        let v = self.vocab_size;
        let file = LmFile {
            format: LM_FORMAT.into(),
            vocab_size: v,
            k: self.k,
            counts: self.counts.chunks(v).map(<[u64]>::to_vec).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("lm serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<BigramLm, DecodeError> {
        let f: LmFile = serde_json::from_str(text).map_err(|e| DecodeError::Lm(e.to_string()))?;
        if f.format != LM_FORMAT {
            return Err(DecodeError::Lm(format!("unsupported format '{}'", f.format)));
        }
        if f.counts.len() != f.vocab_size || f.counts.iter().any(|r| r.len() != f.vocab_size) {
            return Err(DecodeError::Lm("count table is not vocab_size × vocab_size".into()));
        }
        BigramLm::from_counts(f.vocab_size, f.k, f.counts.concat())
    }

    pub fn save(&self, path: &Path) -> Result<(), DecodeError> {
        std::fs::write(path, self.to_json()).map_err(|source| DecodeError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<BigramLm, DecodeError> {
        let text = std::fs::read_to_string(path).map_err(|source| DecodeError::Io { path: path.display().to_string(), source })?;
        BigramLm::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusSpec;
    use crate::rng::Prng;

    fn vocab() -> Vocabulary {
        Vocabulary::build(&CorpusSpec { l1_tokens: 3, l2_tokens: 3, ..Default::default() })
    }

    #[test]
    fn rows_normalise() {
        let v = vocab();
        let lm = BigramLm::train(&v, &[vec![3, 4, 7], vec![8, 3]], 0.5).unwrap();
        for prev in 0..v.len() {
            let s: f64 = (0..v.len()).map(|n| lm.log_prob(prev, n).exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_corpus_concentrates() {
        let lm = BigramLm::train(&vocab(), &vec![vec![3, 4]; 100], 1e-9).unwrap();
        assert!(lm.log_prob(3, 4).exp() > 1.0 - 1e-6);
    }

    #[test]
    fn uniform_corpus_is_near_uniform() {
        let v = vocab();
        let ids = v.lexical_ids();
        let mut rng = Prng::new(2);
        let text: Vec<Vec<TokenId>> =
            (0..10_000).map(|_| (0..10).map(|_| ids[rng.below(ids.len())]).collect()).collect();
        let lm = BigramLm::train(&v, &text, 1.0).unwrap();
        for &a in &ids {
            let lexical: f64 = ids.iter().map(|&b| lm.log_prob(a, b).exp()).sum();
            for &b in &ids {
                let p = lm.log_prob(a, b).exp() / lexical;
                assert!((p * ids.len() as f64 - 1.0).abs() < 0.05);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let lm = BigramLm::train(&vocab(), &[vec![3, 4, 7]], 0.1).unwrap();
        assert_eq!(BigramLm::from_json(&lm.to_json()).unwrap(), lm);
        assert!(BigramLm::from_json("{}").is_err());
    }
}
