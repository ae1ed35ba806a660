//! Marginal likelihoods and predictive distributions for the exact GP and for
//! the banded training covariance (BTC) approximation.
//!
//! Both modes share one code path: the training covariance `L_k(K) + sigma_n^2 I`
//! is factored with the banded Cholesky, and the exact GP is simply the case
//! `k = n - 1`. Only the training block is banded; cross-covariances between
//! training and test inputs are always dense.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::banded::BandedCholeskyFactor;
use crate::error::{Error, Result};
use crate::kernel::{gram_banded, gram_dense, Dataset1D, SeHyperParams};

/// Largest predictive covariance [`PredictiveDistribution::check_pd`] will decompose.
pub const DENSE_CHECK_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Btc,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Exact => f.write_str("exact"),
            Mode::Btc => f.write_str("btc"),
        }
    }
}

/// Factors `L_k(K) + sigma_n^2 I` for the given inputs.
pub fn factor_training_covariance(
    params: &SeHyperParams,
    x: &[f64],
    k: usize,
) -> Result<BandedCholeskyFactor> {
    let mut cov = gram_banded(x, params, k)?;
    cov.add_diagonal_mut(params.noise_var);
    cov.cholesky()
}

fn nll_from_factor(factor: &BandedCholeskyFactor, y: &DVector<f64>) -> Result<f64> {
    let n = y.len() as f64;
    let quad = factor.quad_form(y)?;
    Ok(0.5 * quad + 0.5 * factor.logdet() + 0.5 * n * (2.0 * PI).ln())
}

/// Exact negative log marginal likelihood.
pub fn nll_exact(params: &SeHyperParams, data: &Dataset1D) -> Result<f64> {
    nll_btc(params, data, data.len() - 1)
}

/// Negative log likelihood with the training Gram replaced by its `k`-banded
/// cut-off. `k` larger than `n - 1` is treated as `n - 1`.
///
/// Fails with [`Error::NotPositiveDefinite`] when the banded covariance is not
/// positive definite for these parameters.
pub fn nll_btc(params: &SeHyperParams, data: &Dataset1D, k: usize) -> Result<f64> {
    let k = k.min(data.len() - 1);
    let factor = factor_training_covariance(params, data.x(), k)?;
    nll_from_factor(&factor, &DVector::from_column_slice(data.y()))
}

/// A trained model: hyperparameters, training data and the cached factor of
/// the training covariance.
#[derive(Debug, Clone)]
pub struct FittedModel {
    params: SeHyperParams,
    train: Dataset1D,
    mode: Mode,
    bandwidth: usize,
    factor: BandedCholeskyFactor,
    alpha: DVector<f64>,
}

impl FittedModel {
    /// `k` is only used in [`Mode::Btc`] and is clamped to `n - 1`; exact mode
    /// always uses the full width.
    pub fn fit(params: SeHyperParams, train: Dataset1D, mode: Mode, k: usize) -> Result<Self> {
        params.validate()?;
        let full = train.len() - 1;
        let bandwidth = match mode {
            Mode::Exact => full,
            Mode::Btc => k.min(full),
        };
        let factor = factor_training_covariance(&params, train.x(), bandwidth)?;
        let alpha = factor.solve_vec(&DVector::from_column_slice(train.y()))?;
        Ok(Self {
            params,
            train,
            mode,
            bandwidth,
            factor,
            alpha,
        })
    }

    pub fn params(&self) -> &SeHyperParams {
        &self.params
    }

    pub fn train(&self) -> &Dataset1D {
        &self.train
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn factor(&self) -> &BandedCholeskyFactor {
        &self.factor
    }

    /// Training loss recomputed from the cached factor.
    pub fn nll(&self) -> Result<f64> {
        nll_from_factor(&self.factor, &DVector::from_column_slice(self.train.y()))
    }

    /// Predictive mean and covariance of the latent function at `x_star`.
    pub fn predict(&self, x_star: &[f64]) -> Result<PredictiveDistribution> {
        if let Some(bad) = x_star.iter().find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite test input {bad}")));
        }
        let m = x_star.len();
        if m == 0 {
            return Ok(PredictiveDistribution::empty());
        }
        let k_fs = gram_dense(self.train.x(), x_star, &self.params);
        let mean = k_fs.tr_mul(&self.alpha);
        let v = self.factor.solve_lower(&k_fs)?;
        let mut cov = gram_dense(x_star, x_star, &self.params) - v.tr_mul(&v);
        symmetrize(&mut cov);
        Ok(PredictiveDistribution {
            mean,
            cov,
            includes_noise: false,
        })
    }
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Whether `sigma_n^2 I` has been added to `cov`.
    pub includes_noise: bool,
}

/// Outcome of a dense positive-definiteness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdCheck {
    pub pd: bool,
    pub lambda_min: f64,
}

impl PredictiveDistribution {
    pub fn empty() -> Self {
        Self {
            mean: DVector::zeros(0),
            cov: DMatrix::zeros(0, 0),
            includes_noise: false,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn variances(&self) -> DVector<f64> {
        self.cov.diagonal()
    }

    /// Predictive distribution of noisy observations: `cov + sigma_n^2 I`.
    pub fn add_observation_noise(mut self, noise_var: f64) -> Result<Self> {
        if self.includes_noise {
            return Err(Error::AlreadyNoised);
        }
        for i in 0..self.len() {
            self.cov[(i, i)] += noise_var;
        }
        self.includes_noise = true;
        Ok(self)
    }

    /// Marginal over the test points `indices`.
    pub fn marginal(&self, indices: &[usize]) -> Self {
        Self {
            mean: DVector::from_fn(indices.len(), |i, _| self.mean[indices[i]]),
            cov: DMatrix::from_fn(indices.len(), indices.len(), |i, j| {
                self.cov[(indices[i], indices[j])]
            }),
            includes_noise: self.includes_noise,
        }
    }

    /// Minimum eigenvalue of the covariance, up to [`DENSE_CHECK_LIMIT`] points.
    pub fn check_pd(&self) -> Result<PdCheck> {
        self.check_pd_with_limit(DENSE_CHECK_LIMIT)
    }

    pub fn check_pd_with_limit(&self, limit: usize) -> Result<PdCheck> {
        let m = self.len();
        if m > limit {
            return Err(Error::TooLargeForDenseCheck { limit, got: m });
        }
        if m == 0 {
            return Ok(PdCheck {
                pd: true,
                lambda_min: f64::INFINITY,
            });
        }
        let lambda_min = self.cov.clone().symmetric_eigenvalues().min();
        Ok(PdCheck {
            pd: lambda_min > 0.0,
            lambda_min,
        })
    }
}
