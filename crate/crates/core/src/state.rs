//! Dense density matrices stored column-major, matching the vectorization
//! used by [`crate::superop`].

use faer::Mat;
use thiserror::Error;

use crate::linalg::{hermitian_eigenvalues, EigenError};
use crate::operator::{C64, ONE, ZERO};

/// Hermiticity tolerance of a valid density matrix.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Trace tolerance of a valid density matrix.
pub const TRACE_TOL: f64 = 1e-8;
/// Most negative eigenvalue tolerated in a valid density matrix.
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("expected {expected} entries, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("state is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("trace {0} differs from 1")]
    Trace(f64),
    #[error("minimum eigenvalue {0:e} is negative")]
    Negative(f64),
    #[error("state vector has zero norm")]
    ZeroNorm,
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl DensityMatrix {
    /// Wraps a column-major vectorized matrix without validation.
    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self, StateError> {
        if data.len() != dim * dim {
            return Err(StateError::Shape {
                expected: dim * dim,
                found: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    /// `|ψ⟩⟨ψ|` for a normalized copy of `psi`.
    pub fn pure(psi: &[C64]) -> Result<Self, StateError> {
        let norm = psi.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(StateError::ZeroNorm);
        }
        let dim = psi.len();
        let mut data = vec![ZERO; dim * dim];
        for j in 0..dim {
            for i in 0..dim {
                data[i + j * dim] = psi[i] * psi[j].conj() / (norm * norm);
            }
        }
        Ok(Self { dim, data })
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut data = vec![ZERO; dim * dim];
        data[index + index * dim] = ONE;
        Self { dim, data }
    }

    /// Uniform mixture of the given basis states.
    pub fn mixed_on(dim: usize, indices: &[usize]) -> Self {
        let mut data = vec![ZERO; dim * dim];
        let w = 1.0 / indices.len() as f64;
        for &i in indices {
            data[i + i * dim] = C64::new(w, 0.0);
        }
        Self { dim, data }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self::mixed_on(dim, &(0..dim).collect::<Vec<_>>())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row + col * self.dim]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn to_dense(&self) -> Mat<C64> {
        Mat::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.dim {
            for i in 0..=j {
                worst = worst.max((self.get(i, j) - self.get(j, i).conj()).norm());
            }
        }
        worst
    }

    /// Replaces `ρ` by `(ρ + ρ†)/2`.
    pub fn hermitize(&mut self) {
        let d = self.dim;
        for j in 0..d {
            for i in 0..=j {
                let avg = 0.5 * (self.data[i + j * d] + self.data[j + i * d].conj());
                self.data[i + j * d] = avg;
                self.data[j + i * d] = avg.conj();
            }
        }
    }

    /// Rescales to unit trace; returns the trace before rescaling.
    pub fn normalize(&mut self) -> f64 {
        let tr = self.trace().re;
        if tr != 0.0 {
            for v in &mut self.data {
                *v /= tr;
            }
        }
        tr
    }

    /// `Tr ρ²`, assuming Hermiticity.
    pub fn purity(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum()
    }

    /// `⟨ψ|ρ|ψ⟩`.
    pub fn expectation(&self, psi: &[C64]) -> C64 {
        let d = self.dim;
        let mut total = ZERO;
        for j in 0..d {
            if psi[j] == ZERO {
                continue;
            }
            let col = &self.data[j * d..(j + 1) * d];
            let inner: C64 = col.iter().zip(psi).map(|(r, p)| p.conj() * r).sum();
            total += inner * psi[j];
        }
        total
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>, StateError> {
        let mut h = self.clone();
        h.hermitize();
        Ok(hermitian_eigenvalues(&h.to_dense())?)
    }

    pub fn min_eigenvalue(&self) -> Result<f64, StateError> {
        Ok(self.eigenvalues()?.first().copied().unwrap_or(0.0))
    }

    /// `½ Tr|ρ − σ|`.
    pub fn trace_distance(&self, other: &Self) -> Result<f64, StateError> {
        if other.dim != self.dim {
            return Err(StateError::Shape {
                expected: self.data.len(),
                found: other.data.len(),
            });
        }
        let diff = Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        };
        Ok(0.5 * diff.eigenvalues()?.iter().map(|e| e.abs()).sum::<f64>())
    }

    /// Checks Hermiticity, unit trace and positivity.
    pub fn validate(&self) -> Result<(), StateError> {
        let herm = self.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(StateError::NotHermitian(herm));
        }
        let tr = self.trace().re;
        if (tr - 1.0).abs() > TRACE_TOL {
            return Err(StateError::Trace(tr));
        }
        let min = self.min_eigenvalue()?;
        if min < -POSITIVITY_TOL {
            return Err(StateError::Negative(min));
        }
        Ok(())
    }
}
