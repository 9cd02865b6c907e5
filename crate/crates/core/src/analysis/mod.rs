//! Embedding-space diagnostics: per-language Gaussian fits, divergence and
//! centroid reports, and 2-D PCA scatter plots of the output embeddings.

mod geometry;
mod pca;
mod plot;

pub use geometry::{
    constraint_terms, geometry_report, mean_pairwise_distance, ConstraintTerms, EmbeddingSnapshot, GeometryReport,
    GEOMETRY_CSV_HEADER,
};
pub use pca::{pca_2d, Pca};
pub use plot::{emit_scatter, line_plot_svg, pc_separation, read_scatter_csv, scatter_csv, scatter_svg, ScatterPoint, Series};

use crate::losses::LossError;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("PCA needs at least 3 rows and 2 columns, got {rows}×{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("all rows are identical; no principal direction exists")]
    Degenerate,
    #[error("embedding snapshot has {rows} rows but the vocabulary has {vocab} tokens")]
    RowMismatch { rows: usize, vocab: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}
