//! Desk-scale laboratory for end-to-end code-switching speech recognition
//! trained on monolingual data only, with the output token embeddings of the
//! two languages pulled together by a Gaussian divergence constraint and a
//! centroid cosine-distance constraint.

pub mod autodiff;
pub mod losses;
pub mod rng;
pub mod corpus;
pub mod model;
pub mod analysis;
pub mod train;
pub mod decode;
pub mod metrics;
pub mod config;
pub mod runner;

