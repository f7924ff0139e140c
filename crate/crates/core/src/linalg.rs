//! Dense symmetric positive-(semi)definite linear algebra.
//!
//! Every application of `(K + σ²I)⁻¹` in the crate goes through a
//! [`CholFactor`]. Factorization retries with a small diagonal jitter when the
//! input is only semidefinite; the jitter is scaled by the mean diagonal so the
//! ladder behaves the same for kernels of very different amplitude.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative jitter rungs tried in order, multiplied by `mean(diag(a))`.
pub const JITTER_LADDER: [f64; 5] = [0.0, 1e-12, 1e-10, 1e-8, 1e-6];

/// A square matrix whose entries satisfy `a[i][j] == a[j][i]` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m`, rejecting non-square, empty or inexactly symmetric input.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if n == 0 || m.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix",
                expected: n.max(1),
                got: m.ncols(),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::InvalidData(format!(
                        "matrix not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds an `n × n` matrix from the upper triangle `f(i, j)`, `i <= j`,
    /// mirroring it so symmetry is exact.
    pub fn from_upper(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(n >= 1, "symmetric matrix needs n >= 1");
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.0.diagonal().mean()
    }

    /// Adds `v` to every diagonal entry.
    pub fn add_diagonal(&self, v: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += v;
        }
        SymMatrix(m)
    }

    /// Entrywise sum of two symmetric matrices of equal size.
    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                context: "symmetric matrix sum",
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(SymMatrix(&self.0 + &other.0))
    }
}

impl std::ops::Index<(usize, usize)> for SymMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

/// Cholesky factor of `a + jitter_used·I`.
#[derive(Debug, Clone)]
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    jitter_used: f64,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// The lower-triangular factor `L` with `L·Lᵀ = a + jitter·I`.
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Absolute jitter that was added to the diagonal (zero if none).
    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    /// Solves `(a + jitter·I) x = b` for a single right-hand side.
    pub fn solve_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(b.nrows())?;
        Ok(self.chol.solve(b))
    }

    /// Solves `(a + jitter·I) X = B` column by column.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(b.nrows())?;
        Ok(self.chol.solve(b))
    }

    /// `L⁻¹ b`, the half solve used for quadratic forms `bᵀ A⁻¹ b = ‖L⁻¹ b‖²`.
    pub fn solve_lower_vec(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_rows(b.nrows())?;
        let l = self.chol.l_dirty();
        let mut x = b.clone();
        let n = x.nrows();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= l[(i, k)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        Ok(x)
    }

    /// Explicit inverse `(a + jitter·I)⁻¹`, obtained by solving against the identity.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `log det(a + jitter·I) = 2 Σ log L_ii`.
    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    fn check_rows(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "cholesky solve",
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }
}

/// Factorizes `a`, walking [`JITTER_LADDER`] until a factorization succeeds.
///
/// The ladder is scaled by `mean(diag(a))`, or by 1 when that mean is not
/// positive (e.g. the zero matrix).
pub fn cholesky(a: &SymMatrix) -> Result<CholFactor> {
    let n = a.dim();
    let mean_diag = a.mean_diagonal();
    let scale = if mean_diag.is_finite() && mean_diag > 0.0 {
        mean_diag
    } else {
        1.0
    };
    let mut last = 0.0;
    for rung in JITTER_LADDER {
        let jitter = rung * scale;
        last = jitter;
        let mut m = a.as_matrix().clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            if rung > 0.0 {
                log::debug!("cholesky of {n}x{n} matrix needed jitter {jitter:e}");
            }
            return Ok(CholFactor {
                chol,
                jitter_used: jitter,
            });
        }
    }
    Err(Error::NotPositiveDefinite {
        n,
        max_jitter: last,
    })
}

/// Draws `mean + L z` with `z` standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &CholFactor,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let n = factor.dim();
    if mean.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "sample_mvn mean",
            expected: n,
            got: mean.nrows(),
        });
    }
    let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(mean + factor.chol.l_dirty().lower_triangle() * z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sym(rows: &[&[f64]]) -> SymMatrix {
        let n = rows.len();
        SymMatrix::new(DMatrix::from_fn(n, n, |i, j| rows[i][j])).unwrap()
    }

    #[test]
    fn identity_factor_has_no_jitter() {
        let f = cholesky(&SymMatrix::identity(2)).unwrap();
        assert_eq!(f.lower(), DMatrix::identity(2, 2));
        assert_eq!(f.jitter_used(), 0.0);
        assert_eq!(f.logdet(), 0.0);
    }

    #[test]
    fn two_by_two_hand_factor() {
        let f = cholesky(&sym(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 2.0]);
        assert!((f.lower() - expected).abs().max() < 1e-15);
        assert!((f.logdet() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rank_one_needs_jitter() {
        let f = cholesky(&sym(&[&[1.0, 1.0], &[1.0, 1.0]])).unwrap();
        assert!(f.jitter_used() > 0.0);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let err = cholesky(&sym(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { n: 2, .. }));
    }

    #[test]
    fn asymmetric_input_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(SymMatrix::new(m).is_err());
    }

    #[test]
    fn solves() {
        let f = cholesky(&sym(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        let x = f.solve_vec(&DVector::from_vec(vec![8.0, 9.0])).unwrap();
        assert!((x[0] - 1.375).abs() < 1e-14 && (x[1] - 1.25).abs() < 1e-14);

        let inv = f.solve_mat(&DMatrix::identity(2, 2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[5.0, -2.0, -2.0, 4.0]) / 16.0;
        assert!((inv - expected).abs().max() < 1e-15);

        let id = cholesky(&SymMatrix::identity(3)).unwrap();
        let b = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        assert_eq!(id.solve_vec(&b).unwrap(), b);

        let bad = f.solve_vec(&DVector::zeros(3)).unwrap_err();
        assert!(matches!(bad, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn half_solve_matches_quadratic_form() {
        let a = sym(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let f = cholesky(&a).unwrap();
        let b = DVector::from_vec(vec![1.0, 3.0]);
        let v = f.solve_lower_vec(&b).unwrap();
        let q = b.dot(&f.solve_vec(&b).unwrap());
        assert!((v.norm_squared() - q).abs() < 1e-14);
    }

    #[test]
    fn diagonal_logdet() {
        let f = cholesky(&sym(&[&[4.0, 0.0], &[0.0, 4.0]])).unwrap();
        assert!((f.logdet() - 2.772_588_722_239_781).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_sample_collapses_to_mean() {
        let zero = SymMatrix::from_upper(3, |_, _| 0.0);
        let f = cholesky(&zero).unwrap();
        let mean = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = sample_mvn(&mean, &f, &mut rng).unwrap();
        assert!((s - mean).abs().max() < 1e-3);
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = cholesky(&sym(&[&[4.0, 2.0], &[2.0, 5.0]])).unwrap();
        let mean = DVector::zeros(2);
        let a = sample_mvn(&mean, &f, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let b = sample_mvn(&mean, &f, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        assert_eq!(a, b);
        assert!(sample_mvn(&DVector::zeros(3), &f, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn sample_covariance_matches_target() {
        let target = sym(&[&[4.0, 2.0], &[2.0, 5.0]]);
        let f = cholesky(&target).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mean = DVector::zeros(2);
        let mut acc = DMatrix::<f64>::zeros(2, 2);
        let mut sum = DVector::<f64>::zeros(2);
        let draws: Vec<_> = (0..n)
            .map(|_| sample_mvn(&mean, &f, &mut rng).unwrap())
            .collect();
        for d in &draws {
            sum += d;
        }
        let m = sum / n as f64;
        for d in &draws {
            let c = d - &m;
            acc += &c * c.transpose();
        }
        let cov = acc / (n as f64 - 1.0);
        for i in 0..2 {
            for j in 0..2 {
                let rel = (cov[(i, j)] - target[(i, j)]).abs() / target[(i, j)];
                assert!(rel < 0.05, "entry ({i},{j}) = {} vs {}", cov[(i, j)], target[(i, j)]);
            }
        }
    }
}
