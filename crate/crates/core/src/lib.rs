//! Pedigree-aware genome-wide QTL mapping.
//!
//! The crate fits multivariate Gaussian variance-component models over
//! pedigrees and unrelated samples, screens SNPs with an efficient score
//! test, refines the strongest hits by likelihood-ratio testing, and renders
//! QC diagnostics, significance thresholds and plots.

pub mod cli;
pub mod error;
pub mod genio;
pub mod kinship;
pub mod qc;
pub mod report;
pub mod scan;
pub mod simulate;
pub mod stats;
pub mod vcmodel;

pub use error::{Error, Result};
