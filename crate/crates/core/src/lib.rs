//! Batch speaker diarization over precomputed speaker embeddings.
//!
//! The wideband branch scores embedding pairs (cosine after PCA, or PLDA
//! log-likelihood ratios), builds a k-nearest-neighbour affinity graph,
//! clusters it with path integral clustering (or average-linkage AHC),
//! refines the result with a VB-HMM over the embedding sequence and adds
//! second speakers inside detected overlap regions. The narrowband branch
//! decodes externally produced end-to-end posterior matrices. Both are
//! scored with DER and JER.

pub mod annotation;
pub mod bandwidth;
pub mod clustering;
pub mod container;
pub mod embeddings;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod reseg;
pub mod scoring;
pub mod synthetic;

pub use error::{Error, Result};
