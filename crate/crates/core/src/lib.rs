//! Patient re-identification experiments on histopathology slide images.
//!
//! The crate covers the whole pipeline: slide manifests and splits, tissue
//! masking and tiling, Macenko stain augmentation, a patch classifier and a
//! gated-attention MIL model, recall@k evaluation with the Monte Carlo and
//! temporal experiment protocols, latent-anchor analysis and a publication
//! risk-assessment rule engine.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod latent;
pub mod models;
pub mod nn;
pub mod patches;
pub mod risk;
pub mod seed;
pub mod stain;
pub mod tiling;

pub use error::{Error, Result};
