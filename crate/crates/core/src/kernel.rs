//! Squared-exponential kernel, Gram construction and bandwidth selection.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::banded::BandedSymMatrix;
use crate::error::{Error, Result};

/// Squared-exponential hyperparameters plus the Gaussian noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeHyperParams {
    /// Kernel amplitude `sigma^2`.
    pub signal_var: f64,
    /// Lengthscale `l` (not squared).
    pub lengthscale: f64,
    /// Observation noise variance `sigma_n^2`.
    pub noise_var: f64,
}

impl SeHyperParams {
    pub fn new(signal_var: f64, lengthscale: f64, noise_var: f64) -> Result<Self> {
        let p = Self {
            signal_var,
            lengthscale,
            noise_var,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("signal_var", self.signal_var),
            ("lengthscale", self.lengthscale),
            ("noise_var", self.noise_var),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// `[ln sigma^2, ln l, ln sigma_n^2]`, the coordinates training works in.
    pub fn to_log(&self) -> [f64; 3] {
        [self.signal_var.ln(), self.lengthscale.ln(), self.noise_var.ln()]
    }

    pub fn from_log(p: &[f64; 3]) -> Result<Self> {
        Self::new(p[0].exp(), p[1].exp(), p[2].exp())
    }
}

/// Sorted one-dimensional inputs with their observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset1D {
    x: Vec<f64>,
    y: Vec<f64>,
    delta: f64,
}

impl Dataset1D {
    /// Requires `x` strictly increasing. A single point has infinite spacing.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.is_empty() {
            return Err(Error::TooFewPoints { needed: 1, got: 0 });
        }
        if let Some(bad) = x.iter().chain(&y).find(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value {bad}")));
        }
        let delta = if x.len() == 1 { f64::INFINITY } else { min_spacing(&x)? };
        Ok(Self { x, y, delta })
    }

    /// Sorts the pairs by `x` first; repeated inputs are rejected.
    pub fn from_unsorted(mut pairs: Vec<(f64, f64)>) -> Result<Self> {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (x, y) = pairs.into_iter().unzip();
        Self::new(x, y)
    }

    /// Rows `indices` of this dataset, re-sorted by input.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        Self::new(
            idx.iter().map(|&i| self.x[i]).collect(),
            idx.iter().map(|&i| self.y[i]).collect(),
        )
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Minimum adjacent spacing.
    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// `sigma^2 * exp(-tau^2 / (2 l^2))`.
#[inline]
pub fn se_kernel(tau: f64, params: &SeHyperParams) -> f64 {
    let l = params.lengthscale;
    params.signal_var * (-(tau * tau) / (2.0 * l * l)).exp()
}

pub fn gram_dense(x: &[f64], x2: &[f64], params: &SeHyperParams) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x2.len(), |i, j| se_kernel((x[i] - x2[j]).abs(), params))
}

/// The cut-off Gram matrix `L_k(K)` built from `O(n k)` kernel evaluations.
/// Noise is not included.
pub fn gram_banded(x: &[f64], params: &SeHyperParams, k: usize) -> Result<BandedSymMatrix> {
    BandedSymMatrix::from_fn(x.len(), k, |i, j| se_kernel((x[i] - x[j]).abs(), params))
}

/// Smallest adjacent gap of sorted inputs, which for sorted data equals the
/// smallest pairwise distance.
pub fn min_spacing(x: &[f64]) -> Result<f64> {
    if x.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            got: x.len(),
        });
    }
    let mut delta = f64::INFINITY;
    for (i, w) in x.windows(2).enumerate() {
        let gap = w[1] - w[0];
        if !(gap > 0.0) {
            return Err(Error::DuplicatePoints { index: i + 1, gap });
        }
        delta = delta.min(gap);
    }
    Ok(delta)
}

/// The `q`-quantile (nearest rank) of the adjacent gaps. With `q = 0` this is
/// [`min_spacing`]; larger `q` gives smaller bandwidths for irregular inputs at
/// the cost of the positive-definiteness guarantee.
pub fn quantile_spacing(x: &[f64], q: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParams(format!("quantile {q} outside [0, 1]")));
    }
    min_spacing(x)?;
    let mut gaps: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(f64::total_cmp);
    let idx = ((gaps.len() - 1) as f64 * q).round() as usize;
    Ok(gaps[idx])
}

/// Closed-form bandwidth that keeps `L_k(K) + sigma_n^2 I` positive definite:
///
/// `k = ceil(sqrt(3/2 + (2 l^2 / delta^2) ln(2 sigma^2 l^2 / (3 sigma_n^2 delta^2))))`
/// when the log argument exceeds one, and `2` otherwise.
///
/// The result is not clamped to `n - 1`; see [`clamp_bandwidth`].
pub fn theoretical_bandwidth(params: &SeHyperParams, delta: f64) -> usize {
    let (bandwidth, _) = theoretical_bandwidth_with_branch(params, delta);
    bandwidth
}

/// Which case of the bandwidth formula applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandwidthBranch {
    /// The log argument exceeded one and the square-root formula was used.
    Formula,
    /// The log argument was at most one; the floor value 2 was returned.
    Floor,
}

pub fn theoretical_bandwidth_with_branch(params: &SeHyperParams, delta: f64) -> (usize, BandwidthBranch) {
    let l2 = params.lengthscale * params.lengthscale;
    let d2 = delta * delta;
    let ratio = 2.0 * params.signal_var * l2 / (3.0 * params.noise_var * d2);
    if ratio > 1.0 {
        let k = (1.5 + (2.0 * l2 / d2) * ratio.ln()).sqrt().ceil();
        // Saturates for degenerate spacing instead of wrapping.
        let k = if k.is_finite() && k < usize::MAX as f64 { k as usize } else { usize::MAX };
        (k.max(2), BandwidthBranch::Formula)
    } else {
        (2, BandwidthBranch::Floor)
    }
}

/// Clamps a bandwidth to `n - 1`, returning whether clamping happened.
pub fn clamp_bandwidth(k: usize, n: usize) -> (usize, bool) {
    let max = n.saturating_sub(1);
    if k > max {
        (max, true)
    } else {
        (k, false)
    }
}

/// The largest kernel value a dropped entry may take for the cut-off matrix
/// with noise to stay positive definite:
/// `sigma_n^2 * 3 delta^2 / (4 l^2) * exp(-3 delta^2 / (2 l^2))`.
pub fn dropped_entry_bound(params: &SeHyperParams, delta: f64) -> f64 {
    let l2 = params.lengthscale * params.lengthscale;
    let d2 = delta * delta;
    params.noise_var * 3.0 * d2 / (4.0 * l2) * (-3.0 * d2 / (2.0 * l2)).exp()
}

/// `dropped_entry_bound - max_{|i-j|>k} K_ij`. A non-negative margin certifies
/// that `L_k(K) + sigma_n^2 I` is positive definite.
pub fn thm1_margin(x: &[f64], params: &SeHyperParams, k: usize) -> Result<f64> {
    let delta = min_spacing(x)?;
    let n = x.len();
    if k > n - 1 {
        return Err(Error::BandwidthOutOfRange { k, n });
    }
    let bound = dropped_entry_bound(params, delta);
    // For sorted inputs the largest dropped entry sits on offset k + 1.
    let nearest = x
        .iter()
        .zip(x.iter().skip(k + 1))
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    let max_dropped = if nearest.is_finite() { se_kernel(nearest, params) } else { 0.0 };
    Ok(bound - max_dropped)
}

/// Greedy left-to-right thinning: keeps the first point and then every point at
/// least `delta_min` beyond the last kept one.
pub fn thin_to_spacing(data: &Dataset1D, delta_min: f64) -> Result<Dataset1D> {
    if !(delta_min > 0.0) {
        return Err(Error::InvalidParams(format!(
            "delta_min must be positive, got {delta_min}"
        )));
    }
    let mut keep = vec![0usize];
    let mut last = data.x()[0];
    for (i, &xi) in data.x().iter().enumerate().skip(1) {
        if xi - last >= delta_min {
            keep.push(i);
            last = xi;
        }
    }
    data.subset(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(s2: f64, l: f64, n2: f64) -> SeHyperParams {
        SeHyperParams::new(s2, l, n2).unwrap()
    }

    #[test]
    fn kernel_values() {
        let q = p(2.5, 0.3, 0.1);
        assert_eq!(se_kernel(0.0, &q), 2.5);
        assert_relative_eq!(se_kernel(1.0, &p(1.0, 1.0, 1.0)), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(se_kernel(1.0, &p(1.0, 1.0, 1.0)), 0.60653, epsilon = 1e-5);
        let eps: f64 = 1e-8;
        let tau: f64 = (2.0 * 0.09 * (2.5 / eps).ln()).sqrt() * 1.0001;
        assert!(se_kernel(tau, &q) < eps);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SeHyperParams::new(0.0, 1.0, 1.0).is_err());
        assert!(SeHyperParams::new(1.0, f64::NAN, 1.0).is_err());
        assert!(SeHyperParams::new(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn dense_gram_single_point_and_far_corner() {
        let q = p(3.0, 1.0, 1.0);
        assert_eq!(gram_dense(&[0.7], &[0.7], &q), DMatrix::from_element(1, 1, 3.0));

        let x: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        let k = gram_dense(&x, &x, &p(1.0, 1.0, 1.0));
        assert_relative_eq!(k[(0, 999)], (-(9.99f64 * 9.99) / 2.0).exp(), max_relative = 1e-12);
        assert!((k[(0, 999)] - 2.13e-22).abs() < 0.01e-22);
        assert_eq!(k, k.transpose());
    }

    #[test]
    fn dense_gram_is_spd_on_small_random_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let n = rng.random_range(2..15);
            let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            x.sort_by(f64::total_cmp);
            let q = p(rng.random_range(0.5..2.0), rng.random_range(0.2..1.0), 1.0);
            let k = gram_dense(&x, &x, &q);
            assert_eq!(k, k.transpose());
            let eig = k.symmetric_eigenvalues();
            // Positive semidefinite up to rounding; strictly positive once noise is added.
            assert!(eig.min() > -1e-12);
            assert!((k + DMatrix::identity(n, n) * q.noise_var).symmetric_eigenvalues().min() > 0.0);
        }
    }

    #[test]
    fn banded_gram_small_case() {
        let g = gram_banded(&[0.0, 1.0, 2.0], &p(1.0, 1.0, 1.0), 1).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_eq!(g.get(1, 0), (-0.5f64).exp());
        assert_eq!(g.get(2, 1), (-0.5f64).exp());
        assert_eq!(g.get(2, 0), 0.0);
        assert!(matches!(
            gram_banded(&[0.0, 1.0], &p(1.0, 1.0, 1.0), 2),
            Err(Error::BandwidthOutOfRange { .. })
        ));
    }

    #[test]
    fn banded_gram_full_width_equals_dense() {
        let x = [0.0, 0.3, 0.35, 1.2, 2.0];
        let q = p(1.7, 0.4, 0.2);
        assert_eq!(gram_banded(&x, &q, 4).unwrap().to_dense(), gram_dense(&x, &x, &q));
    }

    #[test]
    fn spacing_examples() {
        assert_relative_eq!(min_spacing(&[0.0, 0.2, 0.4]).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(min_spacing(&[0.0, 0.05, 1.0]).unwrap(), 0.05);
        assert!(matches!(
            min_spacing(&[0.0, 1.0, 1.0]),
            Err(Error::DuplicatePoints { index: 2, .. })
        ));
        assert!(matches!(min_spacing(&[1.0]), Err(Error::TooFewPoints { .. })));
        assert_eq!(quantile_spacing(&[0.0, 0.1, 1.1, 2.1, 3.1], 0.0).unwrap(), 0.1);
        assert_eq!(quantile_spacing(&[0.0, 0.1, 1.1, 2.1, 3.1], 0.5).unwrap(), 1.0);
    }

    #[test]
    fn bandwidth_reference_values() {
        assert_eq!(theoretical_bandwidth(&p(5.0, 1.0, 0.10), 0.2), 19);
        assert_eq!(theoretical_bandwidth(&p(1.0, 0.75, 0.01), 0.1), 31);
        assert_eq!(theoretical_bandwidth(&p(0.8, 2.0, 0.05), 0.2), 38);
        assert_eq!(
            theoretical_bandwidth_with_branch(&p(0.01, 0.1, 1.0), 1.0),
            (2, BandwidthBranch::Floor)
        );
        assert_eq!(clamp_bandwidth(19, 10), (9, true));
        assert_eq!(clamp_bandwidth(5, 10), (5, false));
    }

    #[test]
    fn margin_examples() {
        let q = p(5.0, 1.0, 0.10);
        let x: Vec<f64> = (0..2000).map(|i| i as f64 * 0.2).collect();
        assert!(thm1_margin(&x, &q, 19).unwrap() >= 0.0);
        assert!(thm1_margin(&x, &q, 1).unwrap() < 0.0);
        let short = &x[..30];
        assert_eq!(thm1_margin(short, &q, 29).unwrap(), dropped_entry_bound(&q, min_spacing(short).unwrap()));
        assert!(dropped_entry_bound(&q, 0.2) > 0.0);
    }

    #[test]
    fn thinning_examples() {
        let d = Dataset1D::new(vec![0.0, 0.05, 0.1, 0.2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let t = thin_to_spacing(&d, 0.1).unwrap();
        assert_eq!(t.x(), &[0.0, 0.1, 0.2]);
        assert_eq!(t.y(), &[1.0, 3.0, 4.0]);
        let spaced = Dataset1D::new(vec![0.0, 1.0, 2.5], vec![0.0; 3]).unwrap();
        assert_eq!(thin_to_spacing(&spaced, 1.0).unwrap(), spaced);
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset1D::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(matches!(
            Dataset1D::new(vec![1.0, 0.0], vec![1.0, 1.0]),
            Err(Error::DuplicatePoints { .. })
        ));
        let d = Dataset1D::from_unsorted(vec![(2.0, 20.0), (0.5, 5.0), (1.0, 10.0)]).unwrap();
        assert_eq!(d.x(), &[0.5, 1.0, 2.0]);
        assert_eq!(d.y(), &[5.0, 10.0, 20.0]);
        assert_eq!(d.delta(), 0.5);
        assert!(Dataset1D::from_unsorted(vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert_eq!(Dataset1D::new(vec![3.0], vec![1.0]).unwrap().delta(), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn min_spacing_matches_all_pairs(mut x in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            x.sort_by(f64::total_cmp);
            x.dedup();
            prop_assume!(x.len() >= 2);
            let mut brute = f64::INFINITY;
            for i in 0..x.len() {
                for j in 0..x.len() {
                    if i != j {
                        brute = brute.min((x[i] - x[j]).abs());
                    }
                }
            }
            prop_assert_eq!(min_spacing(&x).unwrap(), brute);
        }

        #[test]
        fn banded_gram_is_cut_off_of_dense(
            mut x in prop::collection::vec(0.0f64..20.0, 1..40),
            s2 in 0.1f64..5.0, l in 0.05f64..3.0, kf in 0.0f64..1.0,
        ) {
            x.sort_by(f64::total_cmp);
            let q = p(s2, l, 0.1);
            let k = ((x.len() - 1) as f64 * kf).round() as usize;
            let banded = gram_banded(&x, &q, k).unwrap();
            let via_dense = BandedSymMatrix::from_dense(&gram_dense(&x, &x, &q), k).unwrap();
            prop_assert_eq!(banded, via_dense);
        }

        #[test]
        fn thinning_respects_spacing(
            mut x in prop::collection::vec(0.0f64..10.0, 2..80),
            delta_min in 0.01f64..1.0,
        ) {
            x.sort_by(f64::total_cmp);
            x.dedup();
            let n = x.len();
            let d = Dataset1D::new(x, vec![0.0; n]).unwrap();
            let t = thin_to_spacing(&d, delta_min).unwrap();
            prop_assert_eq!(t.x()[0], d.x()[0]);
            for w in t.x().windows(2) {
                prop_assert!(w[1] - w[0] >= delta_min);
            }
        }

        #[test]
        fn bandwidth_is_monotone(
            s2 in 0.1f64..10.0, l in 0.1f64..3.0, n2 in 0.001f64..1.0, delta in 0.01f64..0.5,
            f in 1.0f64..2.0,
        ) {
            let base = p(s2, l, n2);
            prop_assume!(2.0 * s2 * l * l / (3.0 * n2 * delta * delta) > 1.0);
            let k = theoretical_bandwidth(&base, delta);
            prop_assert!(theoretical_bandwidth(&p(s2, l * f, n2), delta) >= k);
            prop_assert!(theoretical_bandwidth(&p(s2 * f, l, n2), delta) >= k);
            prop_assert!(theoretical_bandwidth(&p(s2, l, n2 * f), delta) <= k);
            prop_assert!(theoretical_bandwidth(&base, delta * f) <= k);
        }

        #[test]
        fn gershgorin_cut_off_stays_pd(seed in any::<u64>(), n in 3usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
            let a = &b * b.transpose() + DMatrix::identity(n, n) * rng.random_range(0.5..3.0);
            let lmin = a.clone().symmetric_eigenvalues().min();
            for k in 0..n {
                let excluded = (0..n)
                    .map(|i| (0..n).filter(|&j| i.abs_diff(j) > k).map(|j| a[(i, j)].abs()).sum::<f64>())
                    .fold(0.0, f64::max);
                if excluded < lmin {
                    let cut = BandedSymMatrix::from_dense(&((&a + a.transpose()) * 0.5), k).unwrap();
                    prop_assert!(cut.to_dense().symmetric_eigenvalues().min() > 0.0);
                }
            }
        }
    }
}
