//! Symmetric positive-definite solves for kernel ridge regression.

use nalgebra::{Cholesky, DMatrix, Dyn};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Cholesky factorization of `K + lambda I`.
pub struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    lambda: f64,
}

impl SpdSolver {
    /// Factorizes `k + lambda I`; fails with [`Error::NotPositiveDefinite`]
    /// rather than adding jitter.
    pub fn factor(k: ArrayView2<'_, f64>, lambda: f64) -> Result<Self> {
        let (n, c) = k.dim();
        if n != c || n == 0 {
            return Err(Error::Shape(format!("kernel matrix is {n}x{c}, expected square")));
        }
        let mat = DMatrix::from_fn(n, n, |i, j| k[[i, j]] + if i == j { lambda } else { 0.0 });
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite { lambda_eff: lambda });
        }
        let chol = mat
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { lambda_eff: lambda })?;
        Ok(Self { chol, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// `(K + lambda I)^{-1} rhs` for an `n x k` right-hand side.
    pub fn solve(&self, rhs: ArrayView2<'_, f64>) -> Array2<f64> {
        let (r, c) = rhs.dim();
        debug_assert_eq!(r, self.dim());
        let b = DMatrix::from_fn(r, c, |i, j| rhs[[i, j]]);
        let x = self.chol.solve(&b);
        Array2::from_shape_fn((r, c), |(i, j)| x[(i, j)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_system() {
        let k = array![[2.0, 1.0], [1.0, 3.0]];
        let s = SpdSolver::factor(k.view(), 1.0).unwrap();
        let x = s.solve(array![[1.0], [2.0]].view());
        // [[3,1],[1,4]] x = [1,2]
        assert!((3.0 * x[[0, 0]] + x[[1, 0]] - 1.0).abs() < 1e-14);
        assert!((x[[0, 0]] + 4.0 * x[[1, 0]] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_names_lambda() {
        let k = array![[1.0, 2.0], [2.0, 1.0]];
        match SpdSolver::factor(k.view(), 0.5) {
            Err(Error::NotPositiveDefinite { lambda_eff }) => assert_eq!(lambda_eff, 0.5),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }
}
