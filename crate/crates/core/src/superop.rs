//! Liouvillian superoperators acting on column-major vectorized density
//! matrices: `vec(ρ)[i + j·d] = ρ[i, j]`.

use crate::operator::{OperatorError, OperatorMatrix, C64, I, ZERO};

/// Linear generator acting on `vec(ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Superoperator {
    hilbert_dim: usize,
    matrix: OperatorMatrix,
}

impl Superoperator {
    pub fn hilbert_dim(&self) -> usize {
        self.hilbert_dim
    }

    /// Dimension of the vectorized space, `d²`.
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &OperatorMatrix {
        &self.matrix
    }

    pub fn nnz(&self) -> usize {
        self.matrix.nnz()
    }

    pub fn apply(&self, vec_rho: &[C64]) -> Result<Vec<C64>, OperatorError> {
        self.matrix.apply(vec_rho)
    }
}

#[inline]
pub fn vec_index(row: usize, col: usize, dim: usize) -> usize {
    row + col * dim
}

/// `H - (i/2) Σ L†L`, the non-Hermitian generator between jumps.
pub fn effective_generator(
    h: &OperatorMatrix,
    collapse: &[OperatorMatrix],
) -> Result<OperatorMatrix, OperatorError> {
    let mut decay = Vec::with_capacity(collapse.len());
    for l in collapse {
        decay.push(l.dagger().matmul(l)?);
    }
    let total = OperatorMatrix::sum(h.dim(), &decay)?;
    h.add(&total.scale(C64::new(0.0, -0.5)))
}

/// Builds the generator of `ρ̇ = -i[H, ρ] + Σ_k (L_k ρ L_k† − ½{L_k†L_k, ρ})`.
pub fn liouvillian(
    h: &OperatorMatrix,
    collapse: &[OperatorMatrix],
) -> Result<Superoperator, OperatorError> {
    let d = h.dim();
    for l in collapse {
        if l.dim() != d {
            return Err(OperatorError::Shape {
                expected: d,
                found: l.dim(),
            });
        }
    }
    let heff = effective_generator(h, collapse)?;
    let mut triplets: Vec<(usize, usize, C64)> = Vec::new();
    // -i Heff ρ  →  (i, j) ← (k, j)
    for (i, k, v) in heff.iter() {
        let coef = -I * v;
        for j in 0..d {
            triplets.push((vec_index(i, j, d), vec_index(k, j, d), coef));
        }
    }
    // +i ρ Heff†  →  (i, j) ← (i, l) with (Heff†)_{lj} = conj(Heff_{jl})
    for (j, l, v) in heff.iter() {
        let coef = I * v.conj();
        for i in 0..d {
            triplets.push((vec_index(i, j, d), vec_index(i, l, d), coef));
        }
    }
    // L ρ L†  →  (i, j) ← (k, l) with weight L_ik conj(L_jl)
    for op in collapse {
        for (i, k, a) in op.iter() {
            for (j, l, b) in op.iter() {
                triplets.push((vec_index(i, j, d), vec_index(k, l, d), a * b.conj()));
            }
        }
    }
    let matrix = OperatorMatrix::from_triplets(d * d, triplets)?;
    Ok(Superoperator {
        hilbert_dim: d,
        matrix,
    })
}

/// Trace of a column-major vectorized matrix.
pub fn vec_trace(v: &[C64], dim: usize) -> C64 {
    (0..dim).map(|i| v[vec_index(i, i, dim)]).fold(ZERO, |a, b| a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::ONE;

    #[test]
    fn single_decay_of_excited_population() {
        let gamma: f64 = 0.3;
        let l = OperatorMatrix::dyad(2, 0, 1, C64::new(gamma.sqrt(), 0.0)).unwrap();
        let sup = liouvillian(&OperatorMatrix::zeros(2), &[l]).unwrap();
        let mut rho = vec![ZERO; 4];
        rho[vec_index(1, 1, 2)] = ONE;
        let out = sup.apply(&rho).unwrap();
        assert!((out[vec_index(0, 0, 2)].re - gamma).abs() < 1e-15);
        assert!((out[vec_index(1, 1, 2)].re + gamma).abs() < 1e-15);
        assert!(out[vec_index(0, 1, 2)].norm() < 1e-15);
    }

    #[test]
    fn commuting_state_is_stationary_without_dissipation() {
        let h = OperatorMatrix::from_triplets(
            3,
            [(0, 0, ONE), (1, 2, C64::new(0.4, 0.1)), (2, 1, C64::new(0.4, -0.1))],
        )
        .unwrap();
        let sup = liouvillian(&h, &[]).unwrap();
        // ρ = |0⟩⟨0| commutes with h.
        let mut rho = vec![ZERO; 9];
        rho[0] = ONE;
        assert!(sup.apply(&rho).unwrap().iter().all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn rejects_mismatched_collapse_dimension() {
        let err = liouvillian(&OperatorMatrix::zeros(2), &[OperatorMatrix::zeros(3)]).unwrap_err();
        assert!(matches!(err, OperatorError::Shape { .. }));
    }
}
