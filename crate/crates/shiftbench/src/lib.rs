//! Label shift estimation toolkit.
//!
//! When a classifier trained under one class distribution is deployed where
//! the prevalences have moved (but the class-conditional feature
//! distributions have not), the test-batch label distribution can be
//! recovered from the classifier's posteriors alone. This crate implements
//! the estimators, the post-hoc calibrators they depend on, and a
//! reproducible Dirichlet-shift benchmark harness:
//!
//! * [`prob`] — validated probability types and the Bayes prior update.
//! * [`calibration`] — TS/BCTS/VS/NBVS fitting, ECE diagnostics.
//! * [`estimators`] — classify-and-count, EM, BBSL, RLLS, and LEIP
//!   (incremental prior update) with minimum-recall threshold selection.
//! * [`simulation`] — Dirichlet target priors, without-replacement
//!   subsampling, an exact-posterior Gaussian oracle, and confusion
//!   estimation.
//! * [`evaluation`] — weight conventions, MSE/adaptation metrics, and the
//!   multi-run benchmark orchestrator.
//!
//! Everything is pure and deterministic given its seeds; types are
//! immutable after construction and safe to share across threads.

pub mod calibration;
pub mod error;
pub mod estimators;
pub mod evaluation;
mod linalg;
pub mod prob;
pub mod rng;
pub mod simulation;

pub use error::{Result, ShiftError};
pub use prob::{
    batch_prior_update, prior_update, ConfusionKind, ConfusionMatrix, LabeledBatch, LogitMatrix,
    PosteriorMatrix, ProbabilitySimplex, ShiftWeights,
};
