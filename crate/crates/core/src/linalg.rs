//! Small shared linear-algebra helpers built on nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::{Error, Result};

/// Cholesky factor of a symmetric matrix, with a relative singularity
/// threshold: the factorization is rejected when the smallest pivot falls
/// below sqrt(machine epsilon * d) times the largest, which corresponds to
/// an eigenvalue ratio of about machine epsilon * d.
pub fn checked_cholesky(
    a: &DMatrix<f64>,
    context: &str,
    hint: &str,
) -> Result<Cholesky<f64, Dyn>> {
    let singular = || Error::SingularSystem {
        context: context.to_string(),
        hint: hint.to_string(),
    };
    let chol = a.clone().cholesky().ok_or_else(singular)?;
    let diag: Vec<f64> = (0..a.nrows()).map(|i| chol.l_dirty()[(i, i)]).collect();
    let max = diag.iter().cloned().fold(0.0_f64, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let threshold = (f64::EPSILON * a.nrows() as f64).sqrt() * max;
    if !(min > threshold) {
        return Err(singular());
    }
    Ok(chol)
}

/// Solve the symmetric positive definite system `a x = b`.
pub fn sym_solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &str, hint: &str) -> Result<DVector<f64>> {
    Ok(checked_cholesky(a, context, hint)?.solve(b))
}

/// Solve `a X = B` for a matrix right-hand side.
pub fn sym_solve_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    context: &str,
    hint: &str,
) -> Result<DMatrix<f64>> {
    Ok(checked_cholesky(a, context, hint)?.solve(b))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}
