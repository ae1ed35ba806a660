//! Gaussian-process regression on one-dimensional inputs with the
//! squared-exponential kernel, trained through a banded approximation of the
//! training covariance.
//!
//! The training Gram matrix `K` is replaced by its cut-off `L_k(K)`, which
//! keeps only the `k` sub- and super-diagonals. With the noise term added the
//! result is factored by a banded Cholesky in `O(n k^2)`, so likelihood
//! evaluation and training scale linearly in `n`. A closed-form bandwidth
//! ([`kernel::theoretical_bandwidth`]) keeps the cut-off covariance positive
//! definite.
//!
//! Modules, bottom up:
//! - [`banded`]: band storage, cut-off operator, Cholesky, solves
//! - [`kernel`]: SE kernel, Gram construction, spacing, bandwidth selection
//! - [`model`]: likelihoods and predictive distributions
//! - [`train`]: log-space quasi-Newton hyperparameter fitting
//! - [`eval`]: metrics, cross-validation, synthetic data, experiments, benchmarks
//! - [`cli`]: the `btcgp` command-line front end

// `!(x > 0.0)` deliberately also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod banded;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernel;
pub mod model;
pub mod train;

pub use banded::{BandedCholeskyFactor, BandedSymMatrix};
pub use error::{Error, Result};
pub use kernel::{Dataset1D, SeHyperParams};
pub use model::{FittedModel, Mode, PredictiveDistribution};
pub use train::{TrainConfig, TrainResult};
