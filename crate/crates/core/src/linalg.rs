//! Thin wrappers over faer's dense decompositions.

use faer::{Mat, Side};

use crate::operator::C64;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("dense eigendecomposition did not converge")]
pub struct EigenError;

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(m: &Mat<C64>) -> Result<(Vec<f64>, Mat<C64>), EigenError> {
    let evd = m.self_adjoint_eigen(Side::Lower).map_err(|_| EigenError)?;
    let values = evd.S().column_vector().iter().map(|v| v.re).collect();
    Ok((values, evd.U().to_owned()))
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &Mat<C64>) -> Result<Vec<f64>, EigenError> {
    m.self_adjoint_eigenvalues(Side::Lower).map_err(|_| EigenError)
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: &Mat<C64>) -> Result<Vec<f64>, EigenError> {
    m.singular_values().map_err(|_| EigenError)
}
