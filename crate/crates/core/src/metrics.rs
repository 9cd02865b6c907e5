//! Token error rate with the mono / code-switched / all evaluation split.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, UttClass, Utterance};

/// Edit operation counts of one alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal unit-cost alignment of `hyp` against `reference`. Among minimal
/// alignments the one with the fewest insertions plus deletions (most
/// substitutions) is chosen, which makes the counts unique.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    // cost = (errors, insertions + deletions), compared lexicographically
    let mut prev: Vec<(usize, usize)> = (0..=m).map(|j| (j, j)).collect();
    let mut cur = vec![(0, 0); m + 1];
    for i in 1..=n {
        cur[0] = (i, i);
        for j in 1..=m {
            let sub = if reference[i - 1] == hyp[j - 1] { prev[j - 1] } else { (prev[j - 1].0 + 1, prev[j - 1].1) };
            let del = (prev[j].0 + 1, prev[j].1 + 1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1 + 1);
            cur[j] = sub.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (errors, gaps) = prev[m];
    // insertions − deletions = m − n, insertions + deletions = gaps
    let diff = m as isize - n as isize;
    let insertions = ((gaps as isize + diff) / 2) as usize;
    let deletions = gaps - insertions;
    EditCounts { substitutions: errors - gaps, insertions, deletions }
}

/// Aggregated counts for one utterance class.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassReport {
    pub utterances: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_tokens: usize,
    /// `(S + I + D) / reference_tokens`; 0 for an empty class.
    pub error_rate: f64,
}

impl ClassReport {
    fn add(&mut self, c: EditCounts, ref_len: usize) {
        self.utterances += 1;
        self.substitutions += c.substitutions;
        self.insertions += c.insertions;
        self.deletions += c.deletions;
        self.reference_tokens += ref_len;
        self.refresh();
    }

    fn merge(&mut self, o: &ClassReport) {
        self.utterances += o.utterances;
        self.substitutions += o.substitutions;
        self.insertions += o.insertions;
        self.deletions += o.deletions;
        self.reference_tokens += o.reference_tokens;
        self.refresh();
    }

    fn refresh(&mut self) {
        let errors = self.substitutions + self.insertions + self.deletions;
        self.error_rate = if self.reference_tokens == 0 { 0.0 } else { errors as f64 / self.reference_tokens as f64 };
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub mono: ClassReport,
    pub cs: ClassReport,
    pub all: ClassReport,
    /// Reference ids without a hypothesis, scored as full deletions.
    pub missing: Vec<String>,
}

/// Scores hypotheses (keyed by utterance id) against references.
pub fn evaluate(refs: &[Utterance], hyps: &BTreeMap<String, Vec<TokenId>>) -> EvalReport {
    let mut r = EvalReport::default();
    for u in refs {
        let counts = match hyps.get(&u.id) {
            Some(h) => edit_distance(&u.transcript, h),
            None => {
                r.missing.push(u.id.clone());
                edit_distance(&u.transcript, &[])
            }
        };
        let class = if u.class == UttClass::CodeSwitched { &mut r.cs } else { &mut r.mono };
        class.add(counts, u.transcript.len());
        r.all.add(counts, u.transcript.len());
    }
    r
}

impl EvalReport {
    pub fn merge(&self, other: &EvalReport) -> EvalReport {
        let mut out = self.clone();
        out.mono.merge(&other.mono);
        out.cs.merge(&other.cs);
        out.all.merge(&other.all);
        out.missing.extend(other.missing.iter().cloned());
        out
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<6} {:>6} {:>6} {:>5} {:>5} {:>5} {:>8}", "class", "utts", "tokens", "sub", "ins", "del", "TER(%)").unwrap();
        for (name, c) in [("mono", &self.mono), ("cs", &self.cs), ("all", &self.all)] {
            writeln!(
                s,
                "{:<6} {:>6} {:>6} {:>5} {:>5} {:>5} {:>8.2}",
                name,
                c.utterances,
                c.reference_tokens,
                c.substitutions,
                c.insertions,
                c.deletions,
                100.0 * c.error_rate
            )
            .unwrap();
        }
        if !self.missing.is_empty() {
            writeln!(s, "missing hypotheses: {}", self.missing.join(", ")).unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn counts(s: usize, i: usize, d: usize) -> EditCounts {
        EditCounts { substitutions: s, insertions: i, deletions: d }
    }

    #[test]
    fn basic_alignments() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), counts(0, 0, 0));
        assert_eq!(edit_distance(&[1, 2, 3, 4], &[1, 9, 3, 4]), counts(1, 0, 0));
        assert_eq!(edit_distance(&[1, 2], &[]), counts(0, 0, 2));
        assert_eq!(edit_distance::<u8>(&[], &[5, 6]), counts(0, 2, 0));
        assert_eq!(edit_distance(&[1, 2, 3], &[2, 3, 4]), counts(0, 1, 1));
        assert_eq!(edit_distance(&[1, 2], &[3, 4, 5]), counts(2, 1, 0));
    }

    fn utt(id: &str, class: UttClass, t: Vec<TokenId>) -> Utterance {
        Utterance { id: id.into(), class, transcript: t, features: Tensor::zeros(&[1, 1]) }
    }

    #[test]
    fn hand_aligned_fixture() {
        let refs = vec![
            utt("a", UttClass::MonoL1, vec![3, 4, 5, 6]),
            utt("b", UttClass::MonoL2, vec![7, 8]),
            utt("c", UttClass::CodeSwitched, vec![3, 7, 4, 8]),
        ];
        let mut hyps = BTreeMap::new();
        hyps.insert("a".to_string(), vec![3, 9, 5, 6, 6]);
        hyps.insert("c".to_string(), vec![3, 4, 8]);
        let r = evaluate(&refs, &hyps);
        assert_eq!((r.mono.substitutions, r.mono.insertions, r.mono.deletions), (1, 1, 2));
        assert_eq!(r.mono.reference_tokens, 6);
        assert_eq!((r.cs.substitutions, r.cs.insertions, r.cs.deletions), (0, 0, 1));
        assert_eq!(r.all.reference_tokens, 10);
        assert!((r.all.error_rate - 0.5).abs() < 1e-15);
        assert_eq!(r.missing, vec!["b".to_string()]);
        assert!(r.to_table().contains("missing hypotheses: b"));
    }

    #[test]
    fn perfect_hypotheses_score_zero() {
        let refs = vec![utt("a", UttClass::MonoL1, vec![3, 4]), utt("b", UttClass::CodeSwitched, vec![3, 7])];
        let hyps = refs.iter().map(|u| (u.id.clone(), u.transcript.clone())).collect();
        let r = evaluate(&refs, &hyps);
        assert_eq!(r.all.error_rate, 0.0);
        assert!(r.missing.is_empty());
    }
}
