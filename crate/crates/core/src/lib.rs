//! Sparse poly-attention content recommendation.
//!
//! User histories are split into sessions that a small transformer encodes
//! independently; the concatenated token states are fused by three layers of
//! codebook ("poly") attention into standalone user and candidate embeddings,
//! which a light attention head scores against each other.
//!
//! The runnable programs under `examples/` walk through each stage.

pub mod error;

pub mod numerics;
pub mod textprep;
pub mod encoder;
pub mod polyattn;
pub mod predictor;
pub mod model;
pub mod dataio;
pub mod profiler;
pub mod trainer;
pub mod metrics;
pub mod diagnostics;
pub mod settings;
pub mod cli;

pub use error::{Error, Result};
