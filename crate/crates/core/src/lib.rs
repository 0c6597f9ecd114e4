//! Spectral collaborative filtering built around a band-pass graph denoising
//! encoder, with BPR-MF and LightGCN baselines, ranking metrics and the
//! diagnostic experiments used to study spectral feature bands.

pub mod analysis;
pub mod baselines;
pub mod checkpoint;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod gde;
pub mod graph;
pub mod lanczos;
pub mod linalg;
pub mod pipeline;
pub mod sparse;
pub mod spectral;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
