//! Fidelity, purity and populations.
//!
//! Fidelity follows the square-root convention `F = √⟨ψ|ρ|ψ⟩`, so a value
//! of 0.99 means `⟨ψ|ρ|ψ⟩ ≈ 0.98`.

use thiserror::Error;

use crate::model::StateSpace;
use crate::operator::{BasisLabel, Level, C64, ZERO};
use crate::state::DensityMatrix;

/// Radicands down to this value are clamped to zero.
pub const RADICAND_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("dimension mismatch: state has {state}, target has {target}")]
    Dimension { state: usize, target: usize },
    #[error("⟨ψ|ρ|ψ⟩ = {0:e} is negative beyond tolerance")]
    Positivity(f64),
    #[error("unknown state label '{0}'")]
    UnknownLabel(String),
    #[error("target '{0}' is not representable on this basis")]
    Unrepresentable(String),
}

/// A named pure state on a model basis.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetState {
    pub name: String,
    pub vector: Vec<C64>,
}

fn symmetric_sum(
    space: &StateSpace,
    name: &str,
    configs: [&str; 3],
) -> Result<TargetState, ObservableError> {
    let mut vector = vec![ZERO; space.dim()];
    let amp = C64::new(1.0 / 3f64.sqrt(), 0.0);
    for c in configs {
        let atoms: [Level; 3] = BasisLabel::atoms_from_str(c).expect("valid configuration");
        let idx = space
            .product_index(atoms)
            .ok_or_else(|| ObservableError::Unrepresentable(name.to_string()))?;
        vector[idx] = amp;
    }
    Ok(TargetState {
        name: name.to_string(),
        vector,
    })
}

impl TargetState {
    /// `(|100⟩ + |010⟩ + |001⟩)/√3`, with an empty cavity on the full space.
    pub fn w(space: &StateSpace) -> Result<Self, ObservableError> {
        symmetric_sum(space, "W", ["100", "010", "001"])
    }

    /// `(|110⟩ + |101⟩ + |011⟩)/√3`.
    pub fn w_prime(space: &StateSpace) -> Result<Self, ObservableError> {
        symmetric_sum(space, "Wprime", ["110", "101", "011"])
    }

    pub fn basis(space: &StateSpace, label: &str) -> Result<Self, ObservableError> {
        let idx = space
            .index_of(label)
            .ok_or_else(|| ObservableError::UnknownLabel(label.to_string()))?;
        let mut vector = vec![ZERO; space.dim()];
        vector[idx] = C64::new(1.0, 0.0);
        Ok(Self {
            name: label.to_string(),
            vector,
        })
    }

    /// `"W"`, `"Wprime"`, or a basis label.
    pub fn named(space: &StateSpace, name: &str) -> Result<Self, ObservableError> {
        match name {
            "W" => Self::w(space),
            "Wprime" => Self::w_prime(space),
            label => Self::basis(space, label),
        }
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// `√⟨ψ|ρ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, target: &TargetState) -> Result<f64, ObservableError> {
    if rho.dim() != target.vector.len() {
        return Err(ObservableError::Dimension {
            state: rho.dim(),
            target: target.vector.len(),
        });
    }
    let overlap = rho.expectation(&target.vector).re;
    if overlap < -RADICAND_TOL {
        return Err(ObservableError::Positivity(overlap));
    }
    Ok(overlap.max(0.0).sqrt())
}

/// `Tr ρ²`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    rho.purity()
}

/// `⟨label|ρ|label⟩`.
pub fn population(rho: &DensityMatrix, space: &StateSpace, label: &str) -> Result<f64, ObservableError> {
    let target = TargetState::basis(space, label)?;
    if rho.dim() != target.vector.len() {
        return Err(ObservableError::Dimension {
            state: rho.dim(),
            target: target.vector.len(),
        });
    }
    let idx = space.index_of(label).expect("resolved above");
    Ok(rho.get(idx, idx).re)
}
