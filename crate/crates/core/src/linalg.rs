//! Small symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Largest eigenvalue of the symmetric part of `x`.
pub fn lambda_max(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    symmetrize(x)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Smallest eigenvalue of the symmetric part of `x`.
pub fn lambda_min(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    symmetrize(x)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue together with a unit eigenvector.
pub fn top_eigenpair(x: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = symmetrize(x).symmetric_eigen();
    let (idx, val) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    (val, eig.eigenvectors.column(idx).into_owned())
}

/// Eigenvalue tolerance `1e-9 · (1 + ‖X‖_F)` used by every matrix-inequality check.
pub fn eig_tolerance(x: &DMatrix<f64>) -> f64 {
    1e-9 * (1.0 + x.norm())
}

pub fn is_symmetric(x: &DMatrix<f64>) -> bool {
    x.is_square() && (x - x.transpose()).amax() <= 1e-12 * (1.0 + x.amax())
}

pub fn is_positive_definite(x: &DMatrix<f64>) -> bool {
    is_symmetric(x) && lambda_min(x) > 0.0
}

/// Matrix from nested rows; rejects ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return None;
    }
    Some(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}
