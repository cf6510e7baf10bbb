//! Stationary covariance functions and covariance-matrix assembly.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::parallel;

/// Anisotropic (ARD) RBF kernel with per-dimension lengthscales:
///
/// `k(x, y) = variance * exp(-sum_i (x_i - y_i)^2 / (2 * l_i^2))`
///
/// Spatio-temporal inputs use the same kernel with `d + 1` lengthscales,
/// the last one in minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct RbfKernel {
    variance: f64,
    lengthscales: Vec<f64>,
    // -1 / (2 l_i^2), precomputed
    gamma: Vec<f64>,
}

impl RbfKernel {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if variance <= 0.0 || !variance.is_finite() {
            return Err(invalid(format!(
                "kernel variance must be > 0, got {variance}"
            )));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
            return Err(invalid("all lengthscales must be > 0"));
        }
        let gamma = lengthscales.iter().map(|l| -0.5 / (l * l)).collect();
        Ok(Self {
            variance,
            lengthscales,
            gamma,
        })
    }

    /// Isotropic constructor: one lengthscale replicated over `dim` inputs.
    pub fn isotropic(variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(variance, vec![lengthscale; dim])
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Jitter added to every matrix built from this kernel before it is
    /// factorized.
    pub fn jitter(&self) -> f64 {
        1e-6 * self.variance
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(invalid(format!(
                "kernel is {}-dimensional, inputs have {} and {}",
                self.dim(),
                x.len(),
                y.len()
            )));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut e = 0.0;
        for ((a, b), g) in x.iter().zip(y).zip(&self.gamma) {
            let d = a - b;
            e += d * d * g;
        }
        self.variance * e.exp()
    }

    /// Covariance matrix with entry `(i, j) = k(a_i, b_j)`.
    pub fn cov_matrix(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if a.is_empty() || b.is_empty() {
            return Err(invalid("cov_matrix requires non-empty point sets"));
        }
        for p in a.iter().chain(b.iter()) {
            if p.len() != self.dim() {
                return Err(invalid(format!(
                    "point has {} coordinates, kernel expects {}",
                    p.len(),
                    self.dim()
                )));
            }
        }
        Ok(self.cov_rows(&rows_to_matrix(a), &rows_to_matrix(b)))
    }

    /// Covariance between two row-major point matrices (rows are points).
    /// Dimensions are assumed consistent with the kernel.
    pub(crate) fn cov_rows(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(a.ncols(), self.dim());
        debug_assert_eq!(b.ncols(), self.dim());
        let (na, nb) = (a.nrows(), b.nrows());
        let mut k = DMatrix::<f64>::zeros(na, nb);
        // column-major storage: each chunk of length na is one column j
        let a_slice = a.as_slice();
        let b_slice = b.as_slice();
        parallel::for_each_chunk_mut(k.as_mut_slice(), na, |j, col| {
            for (i, out) in col.iter_mut().enumerate() {
                let mut e = 0.0;
                for (dd, g) in self.gamma.iter().enumerate() {
                    // nalgebra stores column-major: entry (i, dd) at dd*na + i
                    let diff = a_slice[dd * na + i] - b_slice[dd * nb + j];
                    e += diff * diff * g;
                }
                *out = self.variance * e.exp();
            }
        });
        k
    }

    /// Diagonal of the self-covariance: constant `variance` for a
    /// stationary kernel.
    pub fn diag(&self, n: usize) -> Vec<f64> {
        vec![self.variance; n]
    }
}

/// Converts a slice of points into a row-major nalgebra matrix.
pub(crate) fn rows_to_matrix(points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, d, |i, j| points[i][j])
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
