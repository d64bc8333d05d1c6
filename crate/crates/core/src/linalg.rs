//! Small dense-matrix helpers shared by the filter and moment recursions.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Returns `(C + Cᵀ) / 2`.
pub fn symmetrize(c: &Matrix) -> Matrix {
    (c + c.transpose()) * 0.5
}

/// Largest absolute asymmetry `max |C_ij − C_ji|`.
pub fn asymmetry(c: &Matrix) -> f64 {
    if !c.is_square() {
        return f64::INFINITY;
    }
    let n = c.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((c[(i, j)] - c[(j, i)]).abs());
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `c`.
pub fn min_eigenvalue(c: &Matrix) -> f64 {
    if c.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(c)).eigenvalues.min()
}

pub fn is_symmetric(c: &Matrix, tol: f64) -> bool {
    c.is_square() && asymmetry(c) <= tol
}

pub fn is_psd(c: &Matrix, tol: f64) -> bool {
    c.is_square() && min_eigenvalue(c) >= -tol
}

/// Symmetric part of `c`, with its symmetry and PSD checked against the
/// tolerances. Returns the symmetrized matrix and whether both checks held.
pub fn symmetrize_checked(c: &Matrix, sym_tol: f64, psd_tol: f64) -> (Matrix, bool) {
    let ok = is_symmetric(c, sym_tol) && is_psd(c, psd_tol);
    (symmetrize(c), ok)
}

/// Ratio of extreme eigenvalue magnitudes of a symmetric matrix.
pub fn condition_estimate(c: &Matrix) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(c)).eigenvalues;
    let max = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `S X = B` for symmetric positive definite `S` through a Cholesky
/// factorization.
pub fn spd_solve(s: &Matrix, b: &Matrix) -> Result<Matrix> {
    match Cholesky::new(symmetrize(s)) {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::SingularInnovation {
            condition: condition_estimate(s),
        }),
    }
}

pub fn trace(c: &Matrix) -> f64 {
    c.trace()
}

/// Builds a matrix from row-major nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn scaled_identity(n: usize, s: f64) -> Matrix {
    Matrix::identity(n, n) * s
}
