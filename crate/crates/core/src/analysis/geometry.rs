use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::{Language, Vocabulary};
use crate::losses::{cd_constraint, centroid, fit_gaussian, jsd_constraint, Jitter, LossError};

/// Copy of the output embedding matrix at some training step.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    pub step: u64,
    pub rows: Tensor,
    pub vocab: Vocabulary,
}

impl EmbeddingSnapshot {
    pub fn new(step: u64, rows: Tensor, vocab: Vocabulary) -> Result<Self, AnalysisError> {
        if rows.ndim() != 2 || rows.rows() != vocab.len() {
            return Err(AnalysisError::RowMismatch { rows: rows.rows(), vocab: vocab.len() });
        }
        Ok(EmbeddingSnapshot { step, rows, vocab })
    }

    /// Rows of one language, in vocabulary order.
    pub fn language_rows(&self, lang: Language) -> Vec<Vec<f64>> {
        self.vocab.language_ids(lang).into_iter().map(|id| self.rows.row(id).to_vec()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub step: u64,
    /// Gaussian divergence between the two languages' fits.
    pub divergence: f64,
    /// Cosine distance between the language centroids.
    pub cd: f64,
    pub intra_l1: f64,
    pub intra_l2: f64,
}

pub const GEOMETRY_CSV_HEADER: &str = "step,divergence,cd,intra_L1,intra_L2";

impl GeometryReport {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.step, self.divergence, self.cd, self.intra_l1, self.intra_l2)
    }
}

/// Constraint nodes over the embedding rows of each language.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintTerms {
    pub jsd: Option<Var>,
    pub cd: Option<Var>,
}

/// Builds the divergence and/or cosine-distance constraint on the L1 and L2
/// rows of `embedding`. This is the single implementation shared by training
/// and diagnostics.
pub fn constraint_terms(
    g: &mut Graph,
    embedding: Var,
    vocab: &Vocabulary,
    jitter: Jitter,
    want_jsd: bool,
    want_cd: bool,
) -> Result<ConstraintTerms, LossError> {
    if !want_jsd && !want_cd {
        return Ok(ConstraintTerms { jsd: None, cd: None });
    }
    let e1 = g.gather_rows(embedding, &vocab.language_ids(Language::L1))?;
    let e2 = g.gather_rows(embedding, &vocab.language_ids(Language::L2))?;
    let jsd = if want_jsd {
        let g1 = fit_gaussian(g, e1, jitter)?;
        let g2 = fit_gaussian(g, e2, jitter)?;
        Some(jsd_constraint(g, &g1, &g2)?)
    } else {
        None
    };
    let cd = if want_cd {
        let c1 = centroid(g, e1)?;
        let c2 = centroid(g, e2)?;
        Some(cd_constraint(g, c1, c2)?)
    } else {
        None
    };
    Ok(ConstraintTerms { jsd, cd })
}

/// Mean Euclidean distance over unordered row pairs (0 for a single row).
pub fn mean_pairwise_distance(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Recomputes both constraints on a snapshot, with the training jitter policy.
pub fn geometry_report(snap: &EmbeddingSnapshot, jitter: Jitter) -> Result<GeometryReport, AnalysisError> {
    let mut g = Graph::new();
    let e = g.constant(snap.rows.clone());
    let terms = constraint_terms(&mut g, e, &snap.vocab, jitter, true, true)?;
    Ok(GeometryReport {
        step: snap.step,
        divergence: g.scalar_value(terms.jsd.expect("requested")),
        cd: g.scalar_value(terms.cd.expect("requested")),
        intra_l1: mean_pairwise_distance(&snap.language_rows(Language::L1)),
        intra_l2: mean_pairwise_distance(&snap.language_rows(Language::L2)),
    })
}
