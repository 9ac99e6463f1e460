//! Gradient-free test-time adaptation for streams of precomputed frame
//! embeddings.
//!
//! A frozen encoder's frame embeddings are classified by cosine similarity
//! against fixed class anchors. Adaptation happens purely in embedding space:
//!
//! - an **offline prototype store** distills each source subject's per-class
//!   frames into cluster medoids (DBSCAN with stability-based parameter
//!   selection, or a k-means k=1 baseline);
//! - a **personalized source cache** pools the prototypes of the source
//!   subjects closest to the target under a diagonal Fréchet distance over
//!   neutral-anchor statistics, and stays fixed during adaptation;
//! - **positive/negative target caches** accumulate confident and moderately
//!   uncertain target samples, admission controlled by a tri-gate rule
//!   (temporal majority, dual entropy thresholds, prototype margin);
//! - each frame's embedding is **fused** with retrieved evidence
//!   (`z + z_src + z⁺ − z⁻`, renormalized) before the final cosine
//!   classification, and video predictions average fused logits over time.
//!
//! The `examples/` directory walks through every major capability; the
//! `ttacache` binary wires the same library calls into a file-based pipeline
//! (`synth gen`, `protos build`, `cache build`, `adapt run`, `eval`,
//! `ablate`).

pub mod caches;
pub mod cli;
pub mod clustering;
pub mod core;
pub mod engine;
pub mod error;
pub mod eval;
pub mod gates;
pub mod personalize;
pub mod store;
pub mod synth;

pub use error::{Error, Result};
