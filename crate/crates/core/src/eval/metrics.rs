use std::f64::consts::PI;

use nalgebra::DVector;

use crate::banded::BandedSymMatrix;
use crate::error::{Error, Result};
use crate::model::PredictiveDistribution;

/// Mean squared error normalised by the variance of `y_star` about its own mean.
pub fn nmse(y_star: &[f64], mu_star: &[f64]) -> Result<f64> {
    if y_star.len() != mu_star.len() {
        return Err(Error::DimensionMismatch {
            expected: y_star.len(),
            got: mu_star.len(),
        });
    }
    if y_star.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let m = y_star.len() as f64;
    let mean = y_star.iter().sum::<f64>() / m;
    let denom = y_star.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / m;
    if !(denom > 0.0) {
        return Err(Error::ConstantTarget);
    }
    let num = y_star
        .iter()
        .zip(mu_star)
        .map(|(y, mu)| (y - mu).powi(2))
        .sum::<f64>()
        / m;
    Ok(num / denom)
}

/// Joint negative log density of `y_star` under `dist`.
///
/// Evaluation metrics pass a distribution that already includes observation
/// noise; the latent predictive is accepted too.
pub fn nlpd(dist: &PredictiveDistribution, y_star: &[f64]) -> Result<f64> {
    let m = dist.len();
    if y_star.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: y_star.len(),
        });
    }
    if m == 0 {
        return Ok(0.0);
    }
    let factor = BandedSymMatrix::from_dense(&dist.cov, m - 1)?.cholesky()?;
    let r = DVector::from_column_slice(y_star) - &dist.mean;
    let quad = factor.quad_form(&r)?;
    Ok(0.5 * quad + 0.5 * factor.logdet() + 0.5 * m as f64 * (2.0 * PI).ln())
}

/// Average of the per-point marginal negative log densities.
pub fn nlpd_mean(dist: &PredictiveDistribution, y_star: &[f64]) -> Result<f64> {
    let m = dist.len();
    if y_star.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: y_star.len(),
        });
    }
    if m == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (i, y) in y_star.iter().enumerate() {
        let var = dist.cov[(i, i)];
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot_index: i });
        }
        total += 0.5 * (y - dist.mean[i]).powi(2) / var + 0.5 * (2.0 * PI * var).ln();
    }
    Ok(total / m as f64)
}
