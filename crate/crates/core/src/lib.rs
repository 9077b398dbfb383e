//! Smoothing-first inference for functional data.
//!
//! Noisy, irregularly sampled curves are reconstructed by local polynomial
//! kernel smoothing with a common GCV-selected bandwidth. Mean, covariance
//! and noise-variance functions are then estimated from the reconstructions,
//! a functional linear model can be fitted, and linear hypotheses about its
//! coefficient functions are tested with an L²-norm statistic whose null law
//! is a χ²-type mixture.

// numerical code: indexed loops read closer to the formulas
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod estimation;
pub mod flm;
pub mod inference;
pub mod io;
pub mod kernels;
pub mod numerics;
pub mod simulation;
pub mod smoothing;

pub use dataset::{EvaluationGrid, FunctionalDataset, Subject};
pub use error::{FdaError, Result};
pub use kernels::{KernelFamily, SmootherSpec};
