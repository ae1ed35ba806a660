//! Synthetic data drawn from SE-kernel Gaussian processes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::banded::BandedSymMatrix;
use crate::error::{Error, Result};
use crate::kernel::{clamp_bandwidth, gram_banded, theoretical_bandwidth, SeHyperParams};

/// Largest input size [`sample_gp`] will factor densely.
pub const DENSE_SAMPLING_LIMIT: usize = 5000;

/// Diagonal jitter relative to `sigma^2` added before the dense factorization.
pub const SAMPLING_JITTER: f64 = 1e-10;

pub fn equispaced(n: usize, delta: f64) -> Vec<f64> {
    (0..n).map(|i| i as f64 * delta).collect()
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Draws `y = L z + sigma_n w` where `L L^T = K + jitter I` is the full Gram
/// matrix and `z`, `w` are standard normal, in that order, from a ChaCha8
/// stream seeded with `seed`.
pub fn sample_gp(x: &[f64], params: &SeHyperParams, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let n = x.len();
    if n > DENSE_SAMPLING_LIMIT {
        return Err(Error::TooLargeForDenseCheck {
            limit: DENSE_SAMPLING_LIMIT,
            got: n,
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut gram = gram_banded(x, params, n - 1)?;
    gram.add_diagonal_mut(SAMPLING_JITTER * params.signal_var);
    let factor = gram.cholesky()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normals(&mut rng, n);
    let w = normals(&mut rng, n);
    let f = factor.mul_lower_vec(&z)?;
    let sd = params.noise_var.sqrt();
    Ok(f.iter().zip(&w).map(|(fi, wi)| fi + sd * wi).collect())
}

/// Draws noisy observations from the banded prior `N(0, L_k(K) + sigma_n^2 I)`
/// with `k` the closed-form bandwidth for `params` at spacing `delta`. Scales to
/// inputs far beyond [`DENSE_SAMPLING_LIMIT`].
pub fn sample_btc_prior(x: &[f64], params: &SeHyperParams, delta: f64, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    let n = x.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let (k, _) = clamp_bandwidth(theoretical_bandwidth(params, delta), n);
    let mut cov: BandedSymMatrix = gram_banded(x, params, k)?;
    cov.add_diagonal_mut(params.noise_var);
    let factor = cov.cholesky()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = normals(&mut rng, n);
    Ok(factor.mul_lower_vec(&z)?.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn variance(y: &[f64]) -> f64 {
        let m = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (y.len() - 1) as f64
    }

    #[test]
    fn noise_only_limit() {
        let x = equispaced(2000, 0.2);
        let p = SeHyperParams::new(1e-12, 1.0, 0.3).unwrap();
        let y = sample_gp(&x, &p, 11).unwrap();
        assert!((variance(&y) / 0.3 - 1.0).abs() < 0.1);
    }

    #[test]
    fn deterministic() {
        let x = equispaced(50, 0.1);
        let p = SeHyperParams::new(1.0, 0.5, 0.1).unwrap();
        assert_eq!(sample_gp(&x, &p, 4).unwrap(), sample_gp(&x, &p, 4).unwrap());
        assert_ne!(sample_gp(&x, &p, 4).unwrap(), sample_gp(&x, &p, 5).unwrap());
        assert_eq!(
            sample_btc_prior(&x, &p, 0.1, 4).unwrap(),
            sample_btc_prior(&x, &p, 0.1, 4).unwrap()
        );
    }

    #[test]
    fn marginal_variance_case_a() {
        let x = equispaced(2000, 0.2);
        let p = SeHyperParams::new(5.0, 1.0, 0.10).unwrap();
        let y = sample_gp(&x, &p, 2024).unwrap();
        let n = x.len() as f64;
        let target = p.signal_var + p.noise_var;
        let mean_square = y.iter().map(|v| v * v).sum::<f64>() / n;
        // Var(mean(y_i^2)) = 2 tr(C^2) / n^2 for y ~ N(0, C), C = K + sigma_n^2 I.
        let mut tr_c2 = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                let c = crate::kernel::se_kernel((x[i] - x[j]).abs(), &p)
                    + if i == j { p.noise_var } else { 0.0 };
                tr_c2 += c * c;
            }
        }
        let se = (2.0 * tr_c2).sqrt() / n;
        assert!((mean_square - target).abs() < 3.0 * se, "{mean_square} vs {target} (se {se})");
        assert!((variance(&y) - target).abs() < 3.0 * se);
    }

    #[test]
    fn dense_limit() {
        let x = equispaced(DENSE_SAMPLING_LIMIT + 1, 1.0);
        let p = SeHyperParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(sample_gp(&x, &p, 0), Err(Error::TooLargeForDenseCheck { .. })));
        assert_eq!(sample_btc_prior(&x, &p, 1.0, 0).unwrap().len(), DENSE_SAMPLING_LIMIT + 1);
    }
}
