//! Symmetric band matrices and their Cholesky factorization.
//!
//! A [`BandedSymMatrix`] of dimension `n` and bandwidth `k` stores the lower
//! band only: `(k + 1) * n` entries laid out column by column, so that column
//! `i` occupies `band[i * (k + 1)..(i + 1) * (k + 1)]` and slot `d` of that
//! column holds `A[i + d, i]`. Slots with `i + d >= n` are padding and stay
//! zero. Building a banded matrix from a dense one is the cut-off operator
//! `L_k`, which zeroes every entry with `|i - j| > k`.
//!
//! Factorization, solves and log-determinants all cost `O(n k^2)` or less and
//! only ever touch band storage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute tolerance used when checking that dense input is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Pivots at or below this value are reported as a loss of positive definiteness.
pub const PIVOT_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymMatrix {
    n: usize,
    k: usize,
    band: Vec<f64>,
}

impl BandedSymMatrix {
    pub fn zeros(n: usize, k: usize) -> Result<Self> {
        check_bandwidth(n, k)?;
        Ok(Self {
            n,
            k,
            band: vec![0.0; (k + 1) * n],
        })
    }

    pub fn identity(n: usize, k: usize) -> Result<Self> {
        let mut m = Self::zeros(n, k)?;
        for i in 0..n {
            m.band[i * (k + 1)] = 1.0;
        }
        Ok(m)
    }

    /// Builds a band matrix by evaluating `f(i, j)` for every in-band lower
    /// entry `i >= j`, `i - j <= k`.
    pub fn from_fn(n: usize, k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(n, k)?;
        let w = k + 1;
        for j in 0..n {
            let depth = k.min(n - 1 - j);
            for d in 0..=depth {
                m.band[j * w + d] = f(j + d, j);
            }
        }
        Ok(m)
    }

    /// The cut-off operator: keeps `A[i, j]` for `|i - j| <= k` and drops the rest.
    pub fn from_dense(a: &DMatrix<f64>, k: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        check_bandwidth(n, k)?;
        for j in 0..n {
            for i in (j + 1)..n {
                let diff = (a[(i, j)] - a[(j, i)]).abs();
                if !(diff <= SYMMETRY_TOL) {
                    return Err(Error::AsymmetricInput { row: i, col: j, diff });
                }
            }
        }
        Self::from_fn(n, k, |i, j| a[(i, j)])
    }

    /// Wraps raw band storage in the column layout described at module level.
    pub fn from_band(n: usize, k: usize, band: Vec<f64>) -> Result<Self> {
        check_bandwidth(n, k)?;
        if band.len() != (k + 1) * n {
            return Err(Error::DimensionMismatch {
                expected: (k + 1) * n,
                got: band.len(),
            });
        }
        let mut m = Self { n, k, band };
        // Padding must be zero.
        for j in n.saturating_sub(k)..n {
            for d in (n - j)..=k {
                m.band[j * (k + 1) + d] = 0.0;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.k
    }

    pub fn band(&self) -> &[f64] {
        &self.band
    }

    /// Entry `(i, j)` of the represented symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(r < self.n, "index ({i}, {j}) out of bounds for dimension {}", self.n);
        let d = r - c;
        if d > self.k {
            0.0
        } else {
            self.band[c * (self.k + 1) + d]
        }
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.band.iter().step_by(self.k + 1).copied()
    }

    /// Returns `self + s * I`. The band and all off-diagonal entries are unchanged.
    pub fn add_diagonal(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.add_diagonal_mut(s);
        out
    }

    pub fn add_diagonal_mut(&mut self, s: f64) {
        let w = self.k + 1;
        for i in 0..self.n {
            self.band[i * w] += s;
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        let w = self.k + 1;
        for j in 0..self.n {
            for d in 0..=self.k.min(self.n - 1 - j) {
                let v = self.band[j * w + d];
                a[(j + d, j)] = v;
                a[(j, j + d)] = v;
            }
        }
        a
    }

    /// `y = A x` using band storage only.
    pub fn mul_vec(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n, x.len())?;
        let w = self.k + 1;
        let mut y = DVector::zeros(self.n);
        for j in 0..self.n {
            let col = &self.band[j * w..(j + 1) * w];
            y[j] += col[0] * x[j];
            for d in 1..=self.k.min(self.n - 1 - j) {
                y[j + d] += col[d] * x[j];
                y[j] += col[d] * x[j + d];
            }
        }
        Ok(y)
    }

    /// Banded Cholesky factorization without pivoting.
    ///
    /// Fails with [`Error::NotPositiveDefinite`] at the first pivot that is
    /// non-finite or not above [`PIVOT_FLOOR`].
    pub fn cholesky(&self) -> Result<BandedCholeskyFactor> {
        let (n, k) = (self.n, self.k);
        let w = k + 1;
        let mut l = self.band.clone();
        for j in 0..n {
            let depth = k.min(n - 1 - j);
            let (head, tail) = l.split_at_mut((j + 1) * w);
            let col = &mut head[j * w..];
            let pivot = col[0];
            if !(pivot > PIVOT_FLOOR) || !pivot.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot_index: j });
            }
            let ljj = pivot.sqrt();
            col[0] = ljj;
            let inv = 1.0 / ljj;
            for v in &mut col[1..=depth] {
                *v *= inv;
            }
            // Rank-one update of the trailing band: column j + c loses
            // L[j + c + r, j] * L[j + c, j] for r = 0..=depth - c.
            for c in 1..=depth {
                let lc = col[c];
                if lc == 0.0 {
                    continue;
                }
                let target = &mut tail[(c - 1) * w..(c - 1) * w + (depth - c + 1)];
                for (t, &src) in target.iter_mut().zip(&col[c..=depth]) {
                    *t -= src * lc;
                }
            }
        }
        Ok(BandedCholeskyFactor { n, k, band: l })
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = B`, stored in the same
/// band layout as the matrix it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedCholeskyFactor {
    n: usize,
    k: usize,
    band: Vec<f64>,
}

impl BandedCholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.k
    }

    pub fn band(&self) -> &[f64] {
        &self.band
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        self.band.iter().step_by(self.k + 1).copied()
    }

    /// Dense lower-triangular copy of `L`.
    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        let w = self.k + 1;
        for j in 0..self.n {
            for d in 0..=self.k.min(self.n - 1 - j) {
                a[(j + d, j)] = self.band[j * w + d];
            }
        }
        a
    }

    /// `L z`, used to draw correlated samples from white noise.
    pub fn mul_lower_vec(&self, z: &[f64]) -> Result<DVector<f64>> {
        check_len(self.n, z.len())?;
        let w = self.k + 1;
        let mut out = DVector::zeros(self.n);
        for j in 0..self.n {
            let depth = self.k.min(self.n - 1 - j);
            let col = &self.band[j * w..j * w + depth + 1];
            for (d, &l) in col.iter().enumerate() {
                out[j + d] += l * z[j];
            }
        }
        Ok(out)
    }

    /// `log|B| = 2 * sum(log L_ii)`.
    pub fn logdet(&self) -> f64 {
        2.0 * self.diagonal().map(f64::ln).sum::<f64>()
    }

    /// Overwrites `b` with `L^{-1} b`.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) -> Result<()> {
        check_len(self.n, b.len())?;
        let w = self.k + 1;
        for j in 0..self.n {
            let depth = self.k.min(self.n - 1 - j);
            let col = &self.band[j * w..j * w + depth + 1];
            let z = b[j] / col[0];
            b[j] = z;
            if z != 0.0 {
                for (bi, &l) in b[j + 1..=j + depth].iter_mut().zip(&col[1..]) {
                    *bi -= l * z;
                }
            }
        }
        Ok(())
    }

    /// Overwrites `b` with `L^{-T} b`.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) -> Result<()> {
        check_len(self.n, b.len())?;
        let w = self.k + 1;
        for j in (0..self.n).rev() {
            let depth = self.k.min(self.n - 1 - j);
            let col = &self.band[j * w..j * w + depth + 1];
            let s: f64 = b[j + 1..=j + depth]
                .iter()
                .zip(&col[1..])
                .map(|(x, l)| x * l)
                .sum();
            b[j] = (b[j] - s) / col[0];
        }
        Ok(())
    }

    /// Solves `(L L^T) X = rhs` column by column.
    pub fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n, rhs.nrows())?;
        let mut x = rhs.clone();
        for mut col in x.column_iter_mut() {
            let s = col.as_mut_slice();
            self.solve_lower_in_place(s)?;
            self.solve_upper_in_place(s)?;
        }
        Ok(x)
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.n, rhs.len())?;
        let mut x = rhs.clone();
        self.solve_lower_in_place(x.as_mut_slice())?;
        self.solve_upper_in_place(x.as_mut_slice())?;
        Ok(x)
    }

    /// `L^{-1} rhs`, the half solve used for quadratic forms and predictive covariances.
    pub fn solve_lower(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.n, rhs.nrows())?;
        let mut x = rhs.clone();
        for mut col in x.column_iter_mut() {
            self.solve_lower_in_place(col.as_mut_slice())?;
        }
        Ok(x)
    }

    /// `y^T B^{-1} y`, computed as `||L^{-1} y||^2`.
    pub fn quad_form(&self, y: &DVector<f64>) -> Result<f64> {
        check_len(self.n, y.len())?;
        let mut z = y.clone();
        self.solve_lower_in_place(z.as_mut_slice())?;
        Ok(z.norm_squared())
    }
}

fn check_bandwidth(n: usize, k: usize) -> Result<()> {
    if n == 0 || k > n - 1 {
        return Err(Error::BandwidthOutOfRange { k, n });
    }
    Ok(())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    /// Diagonally dominant band matrix, hence SPD.
    pub(crate) fn random_spd_banded(n: usize, k: usize, rng: &mut impl Rng) -> BandedSymMatrix {
        let mut b = BandedSymMatrix::from_fn(n, k, |i, j| {
            if i == j {
                0.0
            } else {
                rng.random_range(-1.0..1.0)
            }
        })
        .unwrap();
        for i in 0..n {
            let row: f64 = (0..n).filter(|&j| j != i).map(|j| b.get(i, j).abs()).sum();
            b.band[i * (k + 1)] = row + rng.random_range(0.1..1.0);
        }
        b
    }

    #[test]
    fn cut_off_keeps_everything_at_full_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_symmetric(3, &mut rng);
        let b = BandedSymMatrix::from_dense(&a, 2).unwrap();
        assert_eq!(b.to_dense(), a);
    }

    #[test]
    fn cut_off_tridiagonal() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.1, 1.0, 4.0, 1.0, 0.1, 1.0, 4.0]);
        let b = BandedSymMatrix::from_dense(&a, 1).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0]);
        assert_eq!(b.to_dense(), expected);
        assert_eq!(BandedSymMatrix::from_dense(&b.to_dense(), 1).unwrap(), b);
    }

    #[test]
    fn cut_off_zero_bandwidth_is_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_symmetric(4, &mut rng);
        let b = BandedSymMatrix::from_dense(&a, 0).unwrap();
        assert_eq!(b.to_dense(), DMatrix::from_diagonal(&a.diagonal()));
    }

    #[test]
    fn from_dense_rejects_bad_input() {
        let mut a = DMatrix::<f64>::identity(3, 3);
        a[(0, 2)] = 1e-9;
        assert!(matches!(
            BandedSymMatrix::from_dense(&a, 1),
            Err(Error::AsymmetricInput { .. })
        ));
        let a = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            BandedSymMatrix::from_dense(&a, 3),
            Err(Error::BandwidthOutOfRange { k: 3, n: 3 })
        ));
    }

    #[test]
    fn padding_is_zero() {
        let b = BandedSymMatrix::from_band(3, 2, vec![1.0; 9]).unwrap();
        assert_eq!(b.band(), &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn add_diagonal_cases() {
        let b = BandedSymMatrix::identity(5, 1).unwrap().add_diagonal(2.0);
        assert!(b.diagonal().all(|d| d == 3.0));
        assert_eq!(b.get(1, 0), 0.0);
        assert_eq!(b.bandwidth(), 1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_spd_banded(7, 2, &mut rng);
        assert_eq!(b.add_diagonal(0.0), b);
    }

    #[test]
    fn noise_shift_commutes_with_cut_off() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.random_range(1..12);
            let k = rng.random_range(0..n);
            let s = rng.random_range(0.0..3.0);
            let a = random_symmetric(n, &mut rng);
            let shifted = &a + DMatrix::identity(n, n) * s;
            let lhs = BandedSymMatrix::from_dense(&a, k).unwrap().add_diagonal(s);
            let rhs = BandedSymMatrix::from_dense(&shifted, k).unwrap();
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn cholesky_of_identity() {
        let l = BandedSymMatrix::identity(6, 2).unwrap().cholesky().unwrap();
        assert_eq!(l.to_dense_lower(), DMatrix::identity(6, 6));
    }

    #[test]
    fn cholesky_two_by_two() {
        let b = BandedSymMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 5.0]), 1)
            .unwrap();
        let l = b.cholesky().unwrap();
        assert_eq!(
            l.to_dense_lower(),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0])
        );
        assert_relative_eq!(l.logdet(), 16f64.ln(), epsilon = 1e-14);
        let x = l.solve_vec(&DVector::from_vec(vec![4.0, 2.0])).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cholesky_reports_pivot() {
        let b = BandedSymMatrix::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 1)
            .unwrap();
        assert!(matches!(
            b.cholesky(),
            Err(Error::NotPositiveDefinite { pivot_index: 1 })
        ));
        let nan = BandedSymMatrix::from_band(2, 0, vec![f64::NAN, 1.0]).unwrap();
        assert!(matches!(
            nan.cholesky(),
            Err(Error::NotPositiveDefinite { pivot_index: 0 })
        ));
    }

    #[test]
    fn cholesky_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = random_spd_banded(200, 10, &mut rng);
        let l = b.cholesky().unwrap().to_dense_lower();
        let oracle = b.to_dense().cholesky().unwrap().l();
        let rel = (&l - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-10, "relative error {rel}");
        let rebuilt = &l * l.transpose();
        assert!((&rebuilt - b.to_dense()).norm() / b.to_dense().norm() < 1e-10);
    }

    #[test]
    fn solve_identity_and_dimension_check() {
        let l = BandedSymMatrix::identity(4, 1).unwrap().cholesky().unwrap();
        let rhs = DMatrix::from_fn(4, 3, |i, j| (i * 3 + j) as f64);
        assert_eq!(l.solve(&rhs).unwrap(), rhs);
        assert!(matches!(
            l.solve(&DMatrix::zeros(3, 1)),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
        assert!(l.quad_form(&DVector::zeros(5)).is_err());
    }

    #[test]
    fn solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b = random_spd_banded(300, 15, &mut rng);
        let rhs = DMatrix::from_fn(300, 4, |_, _| rng.random_range(-1.0..1.0));
        let x = b.cholesky().unwrap().solve(&rhs).unwrap();
        let oracle = b.to_dense().lu().solve(&rhs).unwrap();
        assert!((&x - &oracle).norm() / oracle.norm() < 1e-9);
        let residual = b.to_dense() * &x - &rhs;
        assert!(residual.norm() / rhs.norm() < 1e-8);
    }

    #[test]
    fn logdet_and_quad_form() {
        let l = BandedSymMatrix::identity(3, 0).unwrap().cholesky().unwrap();
        assert_eq!(l.logdet(), 0.0);
        let l = BandedSymMatrix::identity(2, 1).unwrap().cholesky().unwrap();
        assert_eq!(l.quad_form(&DVector::from_vec(vec![3.0, 4.0])).unwrap(), 25.0);
        assert_eq!(l.quad_form(&DVector::zeros(2)).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_spd_banded(120, 6, &mut rng);
        let dense = b.to_dense();
        let f = b.cholesky().unwrap();
        let oracle_logdet = dense.clone().lu().determinant().abs().ln();
        assert!((f.logdet() - oracle_logdet).abs() < 1e-9);
        let y = DVector::from_fn(120, |_, _| rng.random_range(-1.0..1.0));
        let oracle_q = y.dot(&dense.lu().solve(&y).unwrap());
        assert_relative_eq!(f.quad_form(&y).unwrap(), oracle_q, max_relative = 1e-9);
    }

    #[test]
    fn mul_vec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_spd_banded(40, 5, &mut rng);
        let x = DVector::from_fn(40, |_, _| rng.random_range(-1.0..1.0));
        let y = b.mul_vec(&x).unwrap();
        assert!((y - b.to_dense() * x).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn cut_off_is_idempotent_and_linear(
            n in 1usize..10,
            kf in 0.0f64..1.0,
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
            seed in any::<u64>(),
        ) {
            let k = ((n - 1) as f64 * kf).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_symmetric(n, &mut rng);
            let c = random_symmetric(n, &mut rng);
            let la = BandedSymMatrix::from_dense(&a, k).unwrap();
            let lla = BandedSymMatrix::from_dense(&la.to_dense(), k).unwrap();
            prop_assert_eq!(&lla, &la);

            let combo = &a * alpha + &c * beta;
            let lhs = BandedSymMatrix::from_dense(&combo, k).unwrap().to_dense();
            let rhs = la.to_dense() * alpha + BandedSymMatrix::from_dense(&c, k).unwrap().to_dense() * beta;
            prop_assert!((lhs - rhs).amax() <= 1e-12);

            let full = BandedSymMatrix::from_dense(&a, n - 1).unwrap();
            prop_assert_eq!(full.to_dense(), a);
        }

        #[test]
        fn factor_solve_consistency(n in 1usize..60, kf in 0.0f64..1.0, seed in any::<u64>()) {
            let k = ((n - 1) as f64 * kf).min(12.0).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = random_spd_banded(n, k, &mut rng);
            let rhs = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
            let x = b.cholesky().unwrap().solve(&rhs).unwrap();
            let back = b.to_dense() * x;
            prop_assert!((back - &rhs).norm() <= 1e-8 * rhs.norm().max(1e-300));
            prop_assert!(b.cholesky().unwrap().diagonal().all(|d| d > 0.0));
        }
    }
}
