//! Small dense linear algebra used by the fitters: pivoted Cholesky with
//! rank detection, triangular solves, and multivariate normal draws.
//!
//! Design matrices here are short and wide-ish (n up to a few tens of
//! thousands, q a few dozen), so forming the Gram matrix and factoring it
//! is cheaper than a full QR and gives us the coefficient covariance for
//! free.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Default relative pivot tolerance for declaring a column collinear.
pub const RANK_TOL: f64 = 1e-10;

/// Cholesky factorization of a symmetric positive semi-definite matrix with
/// diagonal pivoting. Columns whose pivot falls below `rel_tol` times the
/// largest initial diagonal are treated as linearly dependent on the kept
/// ones and excluded from solves (their solution coordinates are zero).
#[derive(Debug, Clone)]
pub struct PivotedCholesky {
    /// Lower-triangular factor in the permuted frame; rows run over all
    /// `dim` permuted coordinates, columns over the `rank` kept pivots.
    factor: Array2<f64>,
    perm: Vec<usize>,
    rank: usize,
    dim: usize,
}

impl PivotedCholesky {
    pub fn decompose(a: &Array2<f64>, rel_tol: f64) -> Self {
        let dim = a.nrows();
        assert_eq!(dim, a.ncols(), "matrix must be square");
        let mut work = a.to_owned();
        let mut factor = Array2::<f64>::zeros((dim, dim));
        let mut perm: Vec<usize> = (0..dim).collect();

        let max_diag = (0..dim).fold(0.0_f64, |m, i| m.max(work[[i, i]]));
        let tol = rel_tol * max_diag.max(f64::MIN_POSITIVE);

        let mut rank = dim;
        for k in 0..dim {
            let mut jmax = k;
            let mut dmax = work[[k, k]];
            for j in (k + 1)..dim {
                if work[[j, j]] > dmax {
                    dmax = work[[j, j]];
                    jmax = j;
                }
            }
            if !(dmax > tol) {
                rank = k;
                break;
            }
            if jmax != k {
                swap_sym(&mut work, k, jmax);
                for c in 0..k {
                    factor.swap([k, c], [jmax, c]);
                }
                perm.swap(k, jmax);
            }
            let lkk = work[[k, k]].sqrt();
            factor[[k, k]] = lkk;
            for i in (k + 1)..dim {
                factor[[i, k]] = work[[i, k]] / lkk;
            }
            for j in (k + 1)..dim {
                let ljk = factor[[j, k]];
                for i in (k + 1)..dim {
                    work[[i, j]] -= factor[[i, k]] * ljk;
                }
            }
        }

        PivotedCholesky {
            factor,
            perm,
            rank,
            dim,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim
    }

    /// Original indices of the columns excluded as collinear.
    pub fn dropped(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.perm[self.rank..].to_vec();
        d.sort_unstable();
        d
    }

    /// Solve `A x = b` on the kept columns; dropped coordinates come back 0.
    pub fn solve(&self, b: &Array1<f64>) -> Array1<f64> {
        assert_eq!(b.len(), self.dim);
        let r = self.rank;
        let mut y = Array1::<f64>::zeros(r);
        for i in 0..r {
            let mut acc = b[self.perm[i]];
            for j in 0..i {
                acc -= self.factor[[i, j]] * y[j];
            }
            y[i] = acc / self.factor[[i, i]];
        }
        let mut z = Array1::<f64>::zeros(r);
        for i in (0..r).rev() {
            let mut acc = y[i];
            for j in (i + 1)..r {
                acc -= self.factor[[j, i]] * z[j];
            }
            z[i] = acc / self.factor[[i, i]];
        }
        let mut x = Array1::<f64>::zeros(self.dim);
        for i in 0..r {
            x[self.perm[i]] = z[i];
        }
        x
    }

    /// Inverse of the kept block, embedded in the original frame with zero
    /// rows/columns at dropped coordinates.
    pub fn inverse(&self) -> Array2<f64> {
        let mut inv = Array2::<f64>::zeros((self.dim, self.dim));
        let mut e = Array1::<f64>::zeros(self.dim);
        for j in 0..self.dim {
            if self.perm[..self.rank].contains(&j) {
                e.fill(0.0);
                e[j] = 1.0;
                let col = self.solve(&e);
                for i in 0..self.dim {
                    inv[[i, j]] = col[i];
                }
            }
        }
        inv
    }

    /// Log determinant of the factored matrix restricted to its rank.
    pub fn logdet(&self) -> f64 {
        (0..self.rank)
            .map(|k| 2.0 * self.factor[[k, k]].ln())
            .sum()
    }

    /// `L z` mapped back to the original frame: a zero-mean draw with
    /// covariance equal to the factored matrix (restricted to its rank).
    pub fn correlate(&self, z: &Array1<f64>) -> Array1<f64> {
        assert!(z.len() >= self.rank);
        let mut out = Array1::<f64>::zeros(self.dim);
        for i in 0..self.dim {
            let mut acc = 0.0;
            for k in 0..self.rank.min(i + 1) {
                acc += self.factor[[i, k]] * z[k];
            }
            out[self.perm[i]] = acc;
        }
        out
    }
}

fn swap_sym(a: &mut Array2<f64>, i: usize, j: usize) {
    let n = a.nrows();
    for c in 0..n {
        a.swap([i, c], [j, c]);
    }
    for r in 0..n {
        a.swap([r, i], [r, j]);
    }
}

/// Plain (unpivoted) lower Cholesky factor; errors if the matrix is not
/// numerically positive definite.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if d <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        l[[j, j]] = d.sqrt();
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / l[[j, j]];
        }
    }
    Ok(l)
}

/// One multivariate normal draw with the given mean and (PSD) covariance.
/// Rank-deficient covariances are handled by drawing only along the kept
/// pivots; a zero covariance returns the mean unchanged.
pub fn mvn_draw<R: Rng + ?Sized>(
    mean: &Array1<f64>,
    cov: &Array2<f64>,
    rng: &mut R,
) -> Array1<f64> {
    let chol = PivotedCholesky::decompose(cov, RANK_TOL);
    let z: Array1<f64> = (0..chol.rank())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    mean + &chol.correlate(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn solves_full_rank_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 2.0, 0.4], [0.6, 0.4, 1.0]];
        let chol = PivotedCholesky::decompose(&a, RANK_TOL);
        assert!(chol.is_full_rank());
        let b = array![1.0, -2.0, 0.5];
        let x = chol.solve(&b);
        let back = a.dot(&x);
        for i in 0..3 {
            assert_abs_diff_eq!(back[i], b[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn detects_collinear_column() {
        // column 2 = column 0 + column 1 in the underlying design
        let x = array![
            [1.0, 0.0, 1.0],
            [1.0, 1.0, 2.0],
            [1.0, 2.0, 3.0],
            [1.0, 3.0, 4.0]
        ];
        let gram = x.t().dot(&x);
        let chol = PivotedCholesky::decompose(&gram, RANK_TOL);
        assert_eq!(chol.rank(), 2);
        assert_eq!(chol.dropped().len(), 1);
    }

    #[test]
    fn inverse_matches_identity() {
        let a = array![[3.0, 1.0], [1.0, 2.0]];
        let chol = PivotedCholesky::decompose(&a, RANK_TOL);
        let inv = chol.inverse();
        let prod = a.dot(&inv);
        assert_abs_diff_eq!(prod[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prod[[1, 1]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(prod[[0, 1]], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn mvn_draw_with_zero_cov_is_mean() {
        let mean = array![1.5, -2.0];
        let cov = Array2::<f64>::zeros((2, 2));
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let d = mvn_draw(&mean, &cov, &mut rng);
        assert_eq!(d, mean);
    }

    #[test]
    fn cholesky_lower_roundtrip() {
        let a = array![[2.0, 0.5], [0.5, 1.0]];
        let l = cholesky_lower(&a).unwrap();
        let back = l.dot(&l.t());
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(back[[i, j]], a[[i, j]], epsilon = 1e-14);
            }
        }
        let bad = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky_lower(&bad).is_err());
    }
}
