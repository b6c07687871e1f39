//! Cholesky factorization of dense symmetric positive definite matrices.
//!
//! nalgebra's triangular solves are unblocked and dominate the M-step at
//! `r` in the hundreds, so the factorizations go through faer. Everything
//! else stays in nalgebra types.

use faer::linalg::solvers::{DenseSolveCore, Llt};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, Par, Side};
use nalgebra::{DMatrix, DVector};

/// `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    llt: Llt<f64>,
}

fn to_faer(m: &DMatrix<f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn to_nalgebra(m: faer::MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

impl SpdFactor {
    /// `None` when `a` is not numerically positive definite. Only the lower
    /// triangle of `a` is read.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        assert_eq!(a.nrows(), a.ncols(), "factorization needs a square matrix");
        let llt = to_faer(a).llt(Side::Lower).ok()?;
        let ok = (0..a.nrows()).all(|i| {
            let d = llt.L()[(i, i)];
            d > 0.0 && d.is_finite()
        });
        ok.then_some(Self { llt })
    }

    pub fn dim(&self) -> usize {
        self.llt.L().nrows()
    }

    pub fn logdet(&self) -> f64 {
        let l = self.llt.L();
        2.0 * (0..self.dim()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        to_nalgebra(self.llt.L())
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.llt.inverse();
        // Symmetrize: faer fills both triangles but rounding can differ.
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i >= j {
                inv[(i, j)]
            } else {
                inv[(j, i)]
            }
        })
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = Mat::from_fn(b.len(), 1, |i, _| b[i]);
        solve_lower_triangular_in_place(self.llt.L(), x.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.llt.L().transpose(), x.as_mut(), Par::Seq);
        DVector::from_fn(b.len(), |i, _| x[(i, 0)])
    }

    /// `A⁻¹ B` for a matrix right-hand side.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = to_faer(b);
        solve_lower_triangular_in_place(self.llt.L(), x.as_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.llt.L().transpose(), x.as_mut(), Par::Seq);
        to_nalgebra(x.as_ref())
    }

    /// `L⁻ᵀ z`: maps standard normal `z` to a draw with covariance `A⁻¹`.
    pub fn solve_lower_transpose(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut x = Mat::from_fn(z.len(), 1, |i, _| z[i]);
        solve_upper_triangular_in_place(self.llt.L().transpose(), x.as_mut(), Par::Seq);
        DVector::from_fn(z.len(), |i, _| x[(i, 0)])
    }
}
