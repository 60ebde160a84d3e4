//! Effective dynamics on an 18-state space.
//!
//! Two reductions of the full model are combined here:
//!
//! * **Zeno pumping.** For `g ≫ Ω` the cavity term `g H₂` confines the
//!   evolution to its zero-eigenvalue subspace. Starting from ground states
//!   with an empty cavity, that subspace is spanned by the ground triples and
//!   five dark states `D₁..D₅`, and the drive acts as `Ω P₀ H₁ P₀`.
//! * **Rydberg pumping.** With `U_rr = 2Δ` and `Δ ≫ Ω_r`, second-order
//!   (third-order for `|000⟩ ↔ |rrr⟩`) elimination of the detuned Rydberg
//!   states gives Stark shifts and resonant couplings between ground triples
//!   and the multiply-excited states `rrr`, `T_1p`, `pp0`, `p0p`, `0pp`.
//!
//! Both the Zeno Hamiltonian and its Lindblad operators are available in
//! closed form and from a numerical projection of the full operators; the
//! antiblockade couplings can be checked against exact atomic dynamics with
//! [`antiblockade_oracle`].

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{PI, SQRT_2};
use std::io::Write;

use faer::Mat;
use thiserror::Error;

use crate::linalg::{hermitian_eigen, EigenError};
use crate::model::{
    build_collapse_ops, build_zeno_coupling, build_zeno_drive, rydberg_hamiltonian, LindbladModel,
    ModelError, StateSpace, SystemParams,
};
use crate::operator::{BasisLabel, Level, OperatorError, OperatorMatrix, ATOM_LEVELS, C64, ZERO};

/// Eigenvalues closer than this (in units of `g`) form one cluster.
pub const ZENO_CLUSTER_TOL: f64 = 1e-9;

/// Gaps between this and [`ZENO_CLUSTER_TOL`] are ambiguous.
const ZENO_GAP_FLOOR: f64 = 1e-6;

/// Allowed disagreement between closed-form and projected operators.
pub const PATH_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum EffectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error("ambiguous eigenvalue gap {gap:e} between clusters near {near}")]
    Degenerate { gap: f64, near: f64 },
    #[error("closed-form and projected effective operators disagree by {max_diff:e}")]
    PathDisagreement { max_diff: f64 },
    #[error("effective Rydberg Hamiltonian assumes U_rr = 2Δ (got U_rr = {u_rr}, Δ = {delta})")]
    UnsupportedRegime { u_rr: f64, delta: f64 },
    #[error("perturbative regime needs Δ/Ω_r >= {min} (got {ratio})")]
    InvalidRegime { ratio: f64, min: f64 },
    #[error("no clean oscillation between {from} and {to}: {reason}")]
    OracleInconclusive {
        from: String,
        to: String,
        reason: String,
    },
}

/// The 18 states of the effective space, in basis order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EffectiveState {
    G000,
    G001,
    G010,
    G100,
    G011,
    G101,
    G110,
    G111,
    D1,
    D2,
    D3,
    D4,
    D5,
    Rrr,
    T1p,
    Pp0,
    P0p,
    Zpp,
}

impl EffectiveState {
    pub const ALL: [EffectiveState; 18] = [
        Self::G000,
        Self::G001,
        Self::G010,
        Self::G100,
        Self::G011,
        Self::G101,
        Self::G110,
        Self::G111,
        Self::D1,
        Self::D2,
        Self::D3,
        Self::D4,
        Self::D5,
        Self::Rrr,
        Self::T1p,
        Self::Pp0,
        Self::P0p,
        Self::Zpp,
    ];

    pub const DARK: [EffectiveState; 5] = [Self::D1, Self::D2, Self::D3, Self::D4, Self::D5];

    pub const RYDBERG: [EffectiveState; 5] = [Self::Rrr, Self::T1p, Self::Pp0, Self::P0p, Self::Zpp];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::G000 => "000",
            Self::G001 => "001",
            Self::G010 => "010",
            Self::G100 => "100",
            Self::G011 => "011",
            Self::G101 => "101",
            Self::G110 => "110",
            Self::G111 => "111",
            Self::D1 => "D1",
            Self::D2 => "D2",
            Self::D3 => "D3",
            Self::D4 => "D4",
            Self::D5 => "D5",
            Self::Rrr => "rrr",
            Self::T1p => "T1p",
            Self::Pp0 => "pp0",
            Self::P0p => "p0p",
            Self::Zpp => "0pp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.name() == name)
    }

    /// The effective state equal to a product configuration, if any.
    pub fn from_atoms(atoms: [Level; 3]) -> Option<Self> {
        let name: String = atoms.iter().map(|l| l.symbol()).collect();
        Self::from_name(&name).filter(|s| s.components().len() == 1)
    }

    pub fn is_ground(self) -> bool {
        self.index() < 8
    }

    pub fn is_dark(self) -> bool {
        Self::DARK.contains(&self)
    }

    pub fn is_rydberg(self) -> bool {
        Self::RYDBERG.contains(&self)
    }

    /// Atomic product components and their real amplitudes.
    pub fn components(self) -> Vec<([Level; 3], f64)> {
        let s2 = 1.0 / SQRT_2;
        let s3 = 1.0 / 3f64.sqrt();
        let s6 = 1.0 / 6f64.sqrt();
        let terms: Vec<(&str, f64)> = match self {
            Self::D1 => vec![("00e", s2), ("e00", -s2)],
            Self::D2 => vec![("0e0", 2.0 * s6), ("e00", -s6), ("00e", -s6)],
            Self::D3 => vec![("10e", s2), ("1e0", -s2)],
            Self::D4 => vec![("01e", s2), ("e10", -s2)],
            Self::D5 => vec![("e01", s2), ("0e1", -s2)],
            Self::T1p => vec![("1pp", s3), ("p1p", s3), ("pp1", s3)],
            other => vec![(other.name(), 1.0)],
        };
        terms.into_iter()
            .map(|(s, a)| (BasisLabel::atoms_from_str(s).expect("valid label"), a))
            .collect()
    }

    /// State vector in the full space with the cavity in vacuum.
    pub fn full_vector(self, n_c: usize) -> Vec<C64> {
        let mut v = vec![ZERO; ATOM_LEVELS.pow(3) * n_c];
        for (atoms, a) in self.components() {
            v[BasisLabel::new(atoms, 0).index(n_c)] = C64::new(a, 0.0);
        }
        v
    }

    /// State vector on the bare 125-state atomic space.
    pub fn atomic_vector(self) -> Vec<C64> {
        self.full_vector(1)
    }
}

fn eff_dyad(row: EffectiveState, col: EffectiveState, value: f64) -> (usize, usize, C64) {
    (row.index(), col.index(), C64::new(value, 0.0))
}

/// Spectral decomposition of the cavity coupling `H₂`.
#[derive(Clone, Debug)]
pub struct ZenoDecomposition {
    /// Distinct eigenvalues `E_n` (units of `g`), ascending.
    pub eigenvalues: Vec<f64>,
    /// Projectors `P_n` onto each eigenspace.
    pub projectors: Vec<OperatorMatrix>,
    /// Position of `E₀ = 0` in `eigenvalues`.
    pub zero_index: usize,
    /// Orthonormal basis of the zero eigenspace inside the sector reachable
    /// from vacuum-cavity states with at most one excited atom.
    pub zero_subspace: Vec<Vec<C64>>,
}

impl ZenoDecomposition {
    pub fn zero_projector(&self) -> &OperatorMatrix {
        &self.projectors[self.zero_index]
    }

    /// `max |Σ_n P_n − I|`.
    pub fn completeness_error(&self) -> f64 {
        let dim = self.projectors[0].dim();
        let sum = OperatorMatrix::sum(dim, &self.projectors).expect("shared dimension");
        sum.max_abs_diff(&OperatorMatrix::identity(dim))
            .expect("shared dimension")
    }

    /// `max |P_n P_m − δ_nm P_n|` over all pairs.
    pub fn orthogonality_error(&self) -> f64 {
        let dense: Vec<Mat<C64>> = self.projectors.iter().map(|p| p.to_dense()).collect();
        let mut worst = 0.0_f64;
        for (n, pn) in dense.iter().enumerate() {
            for (m, pm) in dense.iter().enumerate().skip(n) {
                let prod = pn * pm;
                let dev = if n == m { &prod - pn } else { prod };
                for j in 0..dev.ncols() {
                    for i in 0..dev.nrows() {
                        worst = worst.max(dev[(i, j)].norm());
                    }
                }
            }
        }
        worst
    }

    /// Norm of the part of `v` outside the zero subspace.
    pub fn distance_from_zero_subspace(&self, v: &[C64]) -> f64 {
        let mut rest = v.to_vec();
        for z in &self.zero_subspace {
            let overlap: C64 = z.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
            for (r, a) in rest.iter_mut().zip(z) {
                *r -= overlap * a;
            }
        }
        rest.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// States with an empty cavity, atoms in `{0, 1, e}` and at most one `e`,
/// closed under the action of `H₂`.
fn vacuum_sector(h2: &OperatorMatrix, n_c: usize) -> Vec<usize> {
    let mut seen = vec![false; h2.dim()];
    let mut queue = VecDeque::new();
    for (idx, flag) in seen.iter_mut().enumerate() {
        let label = BasisLabel::from_index(idx, n_c);
        let zeno_levels = label
            .atoms
            .iter()
            .all(|l| matches!(l, Level::Zero | Level::One | Level::Excited));
        let excited = label.atoms.iter().filter(|&&l| l == Level::Excited).count();
        if label.photon == 0 && zeno_levels && excited <= 1 {
            *flag = true;
            queue.push_back(idx);
        }
    }
    while let Some(r) = queue.pop_front() {
        for &c in h2.row(r).0 {
            if !seen[c] {
                seen[c] = true;
                queue.push_back(c);
            }
        }
    }
    (0..seen.len()).filter(|&i| seen[i]).collect()
}

/// Group sorted eigenvalues into clusters; returns `(start, end)` ranges.
fn cluster(values: &[f64]) -> Result<Vec<(usize, usize)>, EffectiveError> {
    let mut ranges = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        if k < values.len() {
            let gap = values[k] - values[k - 1];
            if gap <= ZENO_CLUSTER_TOL {
                continue;
            }
            if gap < ZENO_GAP_FLOOR {
                return Err(EffectiveError::Degenerate {
                    gap,
                    near: values[k],
                });
            }
        }
        ranges.push((start, k));
        start = k;
    }
    Ok(ranges)
}

pub fn zeno_decompose(params: &SystemParams) -> Result<ZenoDecomposition, EffectiveError> {
    params.validate()?;
    let h2 = build_zeno_coupling(params)?;
    let (values, vectors) = hermitian_eigen(&h2.to_dense())?;
    let ranges = cluster(&values)?;
    let dim = h2.dim();

    let mut eigenvalues = Vec::with_capacity(ranges.len());
    let mut projectors = Vec::with_capacity(ranges.len());
    for &(start, end) in &ranges {
        let mean = values[start..end].iter().sum::<f64>() / (end - start) as f64;
        let block = vectors.subcols(start, end - start);
        let proj = block * block.adjoint();
        eigenvalues.push(mean);
        projectors.push(OperatorMatrix::from_dense(&proj)?);
    }
    let zero_index = eigenvalues
        .iter()
        .position(|e| e.abs() <= ZENO_CLUSTER_TOL)
        .ok_or(EffectiveError::Degenerate {
            gap: 0.0,
            near: 0.0,
        })?;

    let sector = vacuum_sector(&h2, params.n_c);
    let mut restricted = Mat::<C64>::zeros(sector.len(), sector.len());
    for (a, &i) in sector.iter().enumerate() {
        for (b, &j) in sector.iter().enumerate() {
            restricted[(a, b)] = h2.get(i, j);
        }
    }
    let (sector_values, sector_vectors) = hermitian_eigen(&restricted)?;
    let zero_subspace = sector_values
        .iter()
        .enumerate()
        .filter(|(_, e)| e.abs() <= ZENO_CLUSTER_TOL)
        .map(|(k, _)| {
            let mut v = vec![ZERO; dim];
            for (a, &i) in sector.iter().enumerate() {
                v[i] = sector_vectors[(a, k)];
            }
            v
        })
        .collect();

    Ok(ZenoDecomposition {
        eigenvalues,
        projectors,
        zero_index,
        zero_subspace,
    })
}

/// `(ground, dark, c)`: the Zeno Hamiltonian contains `Ω c |ground⟩⟨dark| + h.c.`
fn zeno_coupling_table() -> [(EffectiveState, EffectiveState, f64); 11] {
    use EffectiveState::*;
    let s2 = 1.0 / SQRT_2;
    let s6 = 1.0 / 6f64.sqrt();
    [
        (G001, D1, s2),
        (G001, D2, -s6),
        (G100, D1, -s2),
        (G100, D2, -s6),
        (G010, D2, 2.0 * s6),
        (G101, D3, s2),
        (G101, D5, s2),
        (G011, D4, s2),
        (G011, D5, -s2),
        (G110, D3, -s2),
        (G110, D4, -s2),
    ]
}

/// Closed-form `H_eff^Z` on the effective basis.
pub fn zeno_hamiltonian_closed_form(params: &SystemParams) -> OperatorMatrix {
    let triplets = zeno_coupling_table().into_iter().flat_map(|(g, d, c)| {
        let v = params.omega * c;
        [eff_dyad(g, d, v), eff_dyad(d, g, v)]
    });
    OperatorMatrix::from_triplets(EffectiveState::ALL.len(), triplets).expect("fixed size")
}

/// `Ω P₀ H₁ P₀` evaluated numerically and expressed in the effective basis.
pub fn zeno_hamiltonian_projected(
    params: &SystemParams,
    decomposition: &ZenoDecomposition,
) -> Result<OperatorMatrix, EffectiveError> {
    let h1 = build_zeno_drive(params)?;
    let p0 = decomposition.zero_projector();
    let zeno_states: Vec<EffectiveState> = EffectiveState::ALL
        .into_iter()
        .filter(|s| !s.is_rydberg())
        .collect();
    let vectors: Vec<Vec<C64>> = zeno_states
        .iter()
        .map(|s| s.full_vector(params.n_c))
        .collect();
    let mut triplets = Vec::new();
    for (b, ket) in zeno_states.iter().zip(&vectors) {
        let projected = p0.apply(&h1.apply(&p0.apply(ket)?)?)?;
        for (a, bra) in zeno_states.iter().zip(&vectors) {
            let v: C64 = bra.iter().zip(&projected).map(|(x, y)| x.conj() * y).sum();
            triplets.push((a.index(), b.index(), v * params.omega));
        }
    }
    Ok(OperatorMatrix::from_triplets(
        EffectiveState::ALL.len(),
        triplets,
    )?)
}

/// `H_eff^Z`, after checking that the closed form and the numerical
/// projection agree element-wise.
pub fn zeno_effective_hamiltonian(params: &SystemParams) -> Result<OperatorMatrix, EffectiveError> {
    let decomposition = zeno_decompose(params)?;
    let closed = zeno_hamiltonian_closed_form(params);
    let projected = zeno_hamiltonian_projected(params, &decomposition)?;
    let max_diff = closed.max_abs_diff(&projected)?;
    if max_diff > PATH_TOL {
        return Err(EffectiveError::PathDisagreement { max_diff });
    }
    Ok(closed)
}

/// One effective Zeno decay channel `√(γ_e · rate) |to⟩⟨from|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZenoChannel {
    pub to: EffectiveState,
    pub from: EffectiveState,
    /// Rate as a fraction of `γ_e`.
    pub rate: f64,
}

/// The sixteen dark-state decay channels, in their conventional order.
///
/// Channels 1-3 leave `D₂` and channels 6-7 leave `D₁`: these are the
/// assignments that follow from projecting `L_i^{5,6}` onto
/// `D₂ = (2|0e0⟩ − |e00⟩ − |00e⟩)/√6` and `D₁ = (|00e⟩ − |e00⟩)/√2`.
pub fn zeno_channels() -> [ZenoChannel; 16] {
    use EffectiveState::*;
    let ch = |to, from, rate| ZenoChannel { to, from, rate };
    [
        ch(G100, D2, 1.0 / 12.0),
        ch(G001, D2, 1.0 / 12.0),
        ch(G010, D2, 1.0 / 3.0),
        ch(G000, D1, 0.5),
        ch(G000, D2, 0.5),
        ch(G100, D1, 0.25),
        ch(G001, D1, 0.25),
        ch(G110, D3, 0.25),
        ch(G101, D3, 0.25),
        ch(G100, D3, 0.5),
        ch(G010, D4, 0.5),
        ch(G110, D4, 0.25),
        ch(G011, D4, 0.25),
        ch(G101, D5, 0.25),
        ch(G011, D5, 0.25),
        ch(G001, D5, 0.5),
    ]
}

/// The sixteen effective Zeno Lindblad operators.
pub fn zeno_effective_lindblads(params: &SystemParams) -> Vec<OperatorMatrix> {
    zeno_channels()
        .iter()
        .map(|c| {
            let amp = (params.gamma_e * c.rate).sqrt();
            OperatorMatrix::from_triplets(18, [eff_dyad(c.to, c.from, amp)]).expect("fixed size")
        })
        .collect()
}

/// Total rate `Σ_{i,k∈{5,6}} |⟨to,0|L_i^k|from,0⟩|²` obtained by expanding
/// the full excited-state decay operators.
pub fn projected_decay_rate(
    params: &SystemParams,
    to: EffectiveState,
    from: EffectiveState,
) -> Result<f64, EffectiveError> {
    let ops = build_collapse_ops(params)?;
    let bra = to.full_vector(params.n_c);
    let ket = from.full_vector(params.n_c);
    let mut rate = 0.0;
    for site in 0..3 {
        for channel in [4, 5] {
            rate += ops[site * 6 + channel].matrix_element(&bra, &ket)?.norm_sqr();
        }
    }
    Ok(rate)
}

fn check_antiblockade(params: &SystemParams) -> Result<(), EffectiveError> {
    let (u_rr, delta) = (params.u_rr(), params.delta);
    if delta <= 0.0 || (u_rr - 2.0 * delta).abs() > 1e-12 * (2.0 * delta).max(1.0) {
        return Err(EffectiveError::UnsupportedRegime { u_rr, delta });
    }
    Ok(())
}

/// Closed-form `H_eff^R = H^{R₀} + H^{R_I}`: Stark shifts plus the
/// antiblockade couplings.
pub fn rydberg_effective_hamiltonian(params: &SystemParams) -> Result<OperatorMatrix, EffectiveError> {
    use EffectiveState::*;
    params.validate()?;
    check_antiblockade(params)?;
    let (wr, d) = (params.omega_r, params.delta);
    if d < 10.0 * wr {
        log::warn!("Δ/Ω_r = {:.3} is below 10; the effective Rydberg Hamiltonian is unreliable", d / wr);
    }
    let s2 = wr * wr / d;
    let mut triplets = Vec::new();
    let shifts = [
        (vec![G111, T1p], 3.0 * s2),
        (vec![G000, Rrr], 1.5 * s2),
        (vec![G110, G101, G011, Pp0, P0p, Zpp], 2.5 * s2),
        (vec![G100, G010, G001], 2.0 * s2),
    ];
    for (states, shift) in shifts {
        triplets.extend(states.into_iter().map(|s| eff_dyad(s, s, shift)));
    }
    let couplings = [
        (G110, Pp0, 2.0 * s2),
        (G101, P0p, 2.0 * s2),
        (G011, Zpp, 2.0 * s2),
        (G111, T1p, 2.0 * 3f64.sqrt() * s2),
        (G000, Rrr, 1.5 * wr.powi(3) / (d * d)),
    ];
    for (a, b, v) in couplings {
        triplets.push(eff_dyad(a, b, v));
        triplets.push(eff_dyad(b, a, v));
    }
    Ok(OperatorMatrix::from_triplets(18, triplets)?)
}

/// Decay of the multiply-excited Rydberg states into ground triples.
///
/// Each Rydberg atom decays through `L_i^{1..4}` to `|0⟩` or `|1⟩` with
/// equal probability. The intermediate states are outside the effective
/// space and carry no effective Hamiltonian, so each cascade is resolved to
/// its ground-triple end point: the operator `√(Γ_E P(E→g)) |g⟩⟨E|` has
/// `Γ_E = nγ` for `n` Rydberg atoms and `P(E→g)` the cascade branching.
pub fn rydberg_decay_lindblads(params: &SystemParams) -> Vec<OperatorMatrix> {
    let mut ops = Vec::new();
    for state in EffectiveState::RYDBERG {
        let mut branching: BTreeMap<EffectiveState, f64> = BTreeMap::new();
        let mut total_rate = 0.0;
        for (atoms, amp) in state.components() {
            let excited: Vec<usize> = (0..3)
                .filter(|&i| matches!(atoms[i], Level::Rydberg | Level::RydbergP))
                .collect();
            total_rate = params.gamma * excited.len() as f64;
            let outcomes = 1usize << excited.len();
            for pattern in 0..outcomes {
                let mut end = atoms;
                for (bit, &site) in excited.iter().enumerate() {
                    end[site] = if pattern >> bit & 1 == 1 {
                        Level::One
                    } else {
                        Level::Zero
                    };
                }
                let target = EffectiveState::from_atoms(end).expect("ground triple");
                *branching.entry(target).or_default() += amp * amp / outcomes as f64;
            }
        }
        for (target, p) in branching {
            let amp = (total_rate * p).sqrt();
            ops.push(
                OperatorMatrix::from_triplets(18, [eff_dyad(target, state, amp)]).expect("fixed size"),
            );
        }
    }
    ops
}

/// Effective Hamiltonian and Lindblad operators on the 18-state basis.
#[derive(Clone, Debug)]
pub struct EffectiveModel {
    pub h_zeno: OperatorMatrix,
    pub h_rydberg: OperatorMatrix,
    pub zeno_lindblads: Vec<OperatorMatrix>,
    pub rydberg_lindblads: Vec<OperatorMatrix>,
}

impl EffectiveModel {
    pub fn derive(params: &SystemParams) -> Result<Self, EffectiveError> {
        Ok(Self {
            h_zeno: zeno_effective_hamiltonian(params)?,
            h_rydberg: rydberg_effective_hamiltonian(params)?,
            zeno_lindblads: zeno_effective_lindblads(params),
            rydberg_lindblads: rydberg_decay_lindblads(params),
        })
    }

    pub fn h_eff(&self) -> OperatorMatrix {
        self.h_zeno.add(&self.h_rydberg).expect("same basis")
    }

    pub fn into_lindblad(self) -> Result<LindbladModel, EffectiveError> {
        let h = self.h_eff();
        let mut collapse = self.zeno_lindblads;
        collapse.extend(self.rydberg_lindblads);
        Ok(LindbladModel::new(StateSpace::Effective, h, collapse)?)
    }
}

pub fn build_effective_model(params: &SystemParams) -> Result<LindbladModel, EffectiveError> {
    EffectiveModel::derive(params)?.into_lindblad()
}

/// Writes the nonzero entries of `op` as `row,col,re,im` lines.
pub fn write_matrix_csv<W: Write>(
    op: &OperatorMatrix,
    labels: &[String],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "row,col,re,im")?;
    for (r, c, v) in op.iter() {
        writeln!(out, "{},{},{:e},{:e}", labels[r], labels[c], v.re, v.im)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Exact-dynamics check of the antiblockade couplings.

/// Samples per fitting window.
const ORACLE_SAMPLES: usize = 4096;
/// Fitting window length in effective Rabi periods.
const ORACLE_PERIODS: f64 = 4.0;
/// Minimal oscillation amplitude of the target population.
const ORACLE_MIN_AMPLITUDE: f64 = 0.05;

/// Result of fitting one slow Rabi oscillation.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingFit {
    pub from: String,
    pub to: String,
    /// Angular frequency of the target-population oscillation.
    pub frequency: f64,
    /// Half peak-to-peak amplitude of the target population.
    pub amplitude: f64,
    /// Length of the final fitting window.
    pub window: f64,
    /// Closed-form coupling for this pair.
    pub predicted: f64,
}

impl CouplingFit {
    /// Coupling of a resonant two-level oscillation, `ω/2`.
    pub fn coupling(&self) -> f64 {
        self.frequency / 2.0
    }

    /// Coupling recovered from a possibly detuned oscillation, using
    /// `P(t) = (4c²/Ω'²) sin²(Ω't/2)`.
    pub fn detuned_coupling(&self) -> f64 {
        self.frequency * (2.0 * self.amplitude).min(1.0).sqrt() / 2.0
    }

    pub fn relative_error(&self) -> f64 {
        (self.coupling() - self.predicted).abs() / self.predicted
    }
}

/// Exact evolution on the 125-state atomic space under `H_I^R`.
struct AtomicPropagator {
    energies: Vec<f64>,
    vectors: Mat<C64>,
}

impl AtomicPropagator {
    fn new(params: &SystemParams) -> Result<Self, EffectiveError> {
        let h = rydberg_hamiltonian(params, 1)?;
        let (energies, vectors) = hermitian_eigen(&h.to_dense())?;
        Ok(Self { energies, vectors })
    }

    /// Spectral weights `⟨target|n⟩⟨n|init⟩`.
    fn weights(&self, init: &[C64], target: &[C64]) -> Vec<(f64, C64)> {
        (0..self.energies.len())
            .filter_map(|n| {
                let mut to = ZERO;
                let mut from = ZERO;
                for k in 0..init.len() {
                    let u = self.vectors[(k, n)];
                    to += target[k].conj() * u;
                    from += u.conj() * init[k];
                }
                let w = to * from;
                (w.norm() > 1e-14).then_some((self.energies[n], w))
            })
            .collect()
    }
}

fn population(weights: &[(f64, C64)], t: f64) -> f64 {
    weights
        .iter()
        .map(|&(e, w)| w * C64::from_polar(1.0, -e * t))
        .sum::<C64>()
        .norm_sqr()
}

/// Least-squares fit of `a + b cos ωt + c sin ωt`; returns the residual
/// and the amplitude `√(b² + c²)`.
fn sinusoid_fit(times: &[f64], y: &[f64], omega: f64) -> (f64, f64) {
    let mut ata = [[0.0; 3]; 3];
    let mut aty = [0.0; 3];
    for (&t, &v) in times.iter().zip(y) {
        let basis = [1.0, (omega * t).cos(), (omega * t).sin()];
        for i in 0..3 {
            aty[i] += basis[i] * v;
            for j in 0..3 {
                ata[i][j] += basis[i] * basis[j];
            }
        }
    }
    let coef = solve3(ata, aty);
    let residual = times
        .iter()
        .zip(y)
        .map(|(&t, &v)| {
            let f = coef[0] + coef[1] * (omega * t).cos() + coef[2] * (omega * t).sin();
            (v - f) * (v - f)
        })
        .sum();
    (residual, coef[1].hypot(coef[2]))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty");
        a.swap(col, pivot);
        b.swap(col, pivot);
        if a[col][col].abs() < 1e-300 {
            return [0.0; 3];
        }
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Dominant angular frequency and amplitude of `P(t)` on `[0, window]`.
fn dominant_frequency(weights: &[(f64, C64)], window: f64) -> (f64, f64) {
    let n = ORACLE_SAMPLES;
    let dt = window / n as f64;
    let times: Vec<f64> = (0..n).map(|k| k as f64 * dt).collect();
    let y: Vec<f64> = times.iter().map(|&t| population(weights, t)).collect();
    let mean = y.iter().sum::<f64>() / n as f64;

    // Periodogram over the discrete bins, then refine between neighbours.
    let mut best = (1usize, 0.0_f64);
    for bin in 1..n / 2 {
        let step = C64::from_polar(1.0, -2.0 * PI * bin as f64 / n as f64);
        let mut phase = C64::new(1.0, 0.0);
        let mut acc = ZERO;
        for &v in &y {
            acc += phase * (v - mean);
            phase *= step;
        }
        if acc.norm() > best.1 {
            best = (bin, acc.norm());
        }
    }
    let bin_width = 2.0 * PI / window;
    let mut lo = (best.0 as f64 - 1.0).max(0.05) * bin_width;
    let mut hi = (best.0 as f64 + 1.0) * bin_width;
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let residual = |w: f64| sinusoid_fit(&times, &y, w).0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (residual(x1), residual(x2));
    for _ in 0..80 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = residual(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = residual(x2);
        }
    }
    let omega = 0.5 * (lo + hi);
    (omega, sinusoid_fit(&times, &y, omega).1)
}

/// Fits the slow oscillation of `|⟨target|ψ(t)⟩|²` for `ψ(0) = init` under
/// the exact atomic Rydberg Hamiltonian.
///
/// The window starts at a few bare Rabi periods and doubles until it spans
/// at least four periods of the detected oscillation; the final fit uses
/// exactly four periods.
pub fn fit_oscillation(
    params: &SystemParams,
    from: &str,
    init: &[C64],
    to: &str,
    target: &[C64],
    predicted: f64,
) -> Result<CouplingFit, EffectiveError> {
    let inconclusive = |reason: String| EffectiveError::OracleInconclusive {
        from: from.to_string(),
        to: to.to_string(),
        reason,
    };
    let propagator = AtomicPropagator::new(params)?;
    let weights = propagator.weights(init, target);
    let mut window = 16.0 * PI / params.omega_r.max(1e-12);
    for _ in 0..60 {
        let (omega, _) = dominant_frequency(&weights, window);
        if omega * window >= 2.0 * PI * ORACLE_PERIODS {
            let window = 2.0 * PI * ORACLE_PERIODS / omega;
            let (frequency, amplitude) = dominant_frequency(&weights, window);
            if amplitude < ORACLE_MIN_AMPLITUDE {
                return Err(inconclusive(format!("oscillation amplitude {amplitude:.3e} too small")));
            }
            return Ok(CouplingFit {
                from: from.to_string(),
                to: to.to_string(),
                frequency,
                amplitude,
                window,
                predicted,
            });
        }
        window *= 2.0;
    }
    Err(inconclusive(format!("no oscillation within a window of {window:.3e}")))
}

/// Fits the antiblockade couplings `|111⟩↔|T_1p⟩`, `|110⟩↔|pp0⟩` and
/// `|000⟩↔|rrr⟩` from exact dynamics. When `U_rp = 1.5Δ` the extra
/// `|100⟩↔|prr⟩` transition is fitted as well.
pub fn antiblockade_oracle(params: &SystemParams) -> Result<Vec<CouplingFit>, EffectiveError> {
    use EffectiveState::*;
    params.validate()?;
    let ratio = params.delta / params.omega_r;
    if ratio < 10.0 {
        return Err(EffectiveError::InvalidRegime { ratio, min: 10.0 });
    }
    let (wr, d) = (params.omega_r, params.delta);
    let pairs = [
        (G111, T1p, 2.0 * 3f64.sqrt() * wr * wr / d),
        (G110, Pp0, 2.0 * wr * wr / d),
        (G000, Rrr, 1.5 * wr.powi(3) / (d * d)),
    ];
    let mut fits = Vec::new();
    for (a, b, predicted) in pairs {
        fits.push(fit_oscillation(
            params,
            a.name(),
            &a.atomic_vector(),
            b.name(),
            &b.atomic_vector(),
            predicted,
        )?);
    }
    if (params.u_rp - 1.5 * d).abs() <= 1e-9 * d {
        let prr = BasisLabel::new([Level::RydbergP, Level::Rydberg, Level::Rydberg], 0);
        let mut target = vec![ZERO; 125];
        target[prr.index(1)] = C64::new(1.0, 0.0);
        fits.push(fit_oscillation(
            params,
            "100",
            &G100.atomic_vector(),
            "prr",
            &target,
            2.5 * wr.powi(3) / (d * d),
        )?);
    }
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use EffectiveState::*;

    #[test]
    fn state_names_round_trip() {
        for (i, s) in EffectiveState::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
            assert_eq!(EffectiveState::from_name(s.name()), Some(*s));
        }
        assert_eq!(EffectiveState::from_atoms([Level::RydbergP, Level::Zero, Level::RydbergP]), Some(P0p));
        assert_eq!(EffectiveState::from_atoms([Level::Excited, Level::Zero, Level::Zero]), None);
    }

    #[test]
    fn effective_states_are_orthonormal() {
        for a in EffectiveState::ALL {
            for b in EffectiveState::ALL {
                let va = a.atomic_vector();
                let vb = b.atomic_vector();
                let ip: C64 = va.iter().zip(&vb).map(|(x, y)| x.conj() * y).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((ip.re - expected).abs() < 1e-15 && ip.im.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn clustering_flags_ambiguous_gaps() {
        assert_eq!(cluster(&[0.0, 1e-12, 1.0]).unwrap(), vec![(0, 2), (2, 3)]);
        assert!(matches!(cluster(&[0.0, 1e-7]), Err(EffectiveError::Degenerate { .. })));
    }

    #[test]
    fn rydberg_closed_form_requires_resonance() {
        let p = SystemParams {
            u_rr: Some(50.0),
            ..Default::default()
        };
        assert!(matches!(
            rydberg_effective_hamiltonian(&p),
            Err(EffectiveError::UnsupportedRegime { .. })
        ));
    }

    #[test]
    fn rydberg_closed_form_elements() {
        let p = SystemParams {
            omega_r: 1.3,
            delta: 40.0,
            ..Default::default()
        };
        let h = rydberg_effective_hamiltonian(&p).unwrap();
        let s2 = 1.3 * 1.3 / 40.0;
        assert!((h.get(G111.index(), T1p.index()).re - 2.0 * 3f64.sqrt() * s2).abs() < 1e-15);
        assert!((h.get(Rrr.index(), G000.index()).re - 3.0 * 1.3f64.powi(3) / 3200.0).abs() < 1e-15);
        assert!((h.get(G001.index(), G001.index()).re - 2.0 * s2).abs() < 1e-15);
        assert!(h.is_hermitian(0.0));
    }

    #[test]
    fn rydberg_decay_branching_conserves_rate() {
        let p = SystemParams::default();
        let ops = rydberg_decay_lindblads(&p);
        for (state, n) in [(Rrr, 3.0), (T1p, 2.0), (Pp0, 2.0), (P0p, 2.0), (Zpp, 2.0)] {
            let total: f64 = ops
                .iter()
                .flat_map(|l| l.iter().filter(|&(_, c, _)| c == state.index()).map(|(_, _, v)| v.norm_sqr()).collect::<Vec<_>>())
                .sum();
            assert!((total - n * p.gamma).abs() < 1e-15, "{state:?}");
        }
        for l in &ops {
            for (r, _, _) in l.iter() {
                assert!(EffectiveState::ALL[r].is_ground());
            }
        }
    }

    #[test]
    fn sinusoid_fit_recovers_frequency() {
        let w = 0.37;
        let weights = vec![(0.0, C64::new(0.5, 0.0)), (w, C64::new(0.5, 0.0))];
        // |½ + ½ e^{-iwt}|² = ½(1 + cos wt)
        let (omega, amp) = dominant_frequency(&weights, 4.0 * 2.0 * PI / w * 1.13);
        assert!((omega - w).abs() < 1e-9 * w);
        assert!((amp - 0.5).abs() < 1e-9);
    }
    #[test]
    fn zeno_zero_subspace_holds_ground_and_dark_states() {
        let p = SystemParams::default();
        let z = zeno_decompose(&p).unwrap();
        assert_eq!(z.zero_subspace.len(), 13);
        assert!(z.eigenvalues[z.zero_index].abs() < ZENO_CLUSTER_TOL);
        for s in EffectiveState::ALL.into_iter().filter(|s| !s.is_rydberg()) {
            assert!(z.distance_from_zero_subspace(&s.full_vector(p.n_c)) < 1e-10, "{s:?}");
        }
        assert!(z.completeness_error() < 1e-10);
        assert!(z.orthogonality_error() < 1e-10);
    }

    #[test]
    fn zeno_hamiltonian_paths_agree() {
        let p = SystemParams {
            omega: 0.037,
            ..Default::default()
        };
        let z = zeno_decompose(&p).unwrap();
        let projected = zeno_hamiltonian_projected(&p, &z).unwrap();
        let closed = zeno_hamiltonian_closed_form(&p);
        assert!(closed.max_abs_diff(&projected).unwrap() < PATH_TOL);
        assert!((closed.get(D2.index(), G010.index()).re - 2.0 * 0.037 / 6f64.sqrt()).abs() < 1e-15);
        assert!((closed.get(D3.index(), G110.index()).re + 0.037 / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zeno_channels_match_projected_rates() {
        let p = SystemParams {
            gamma_e: 0.7,
            ..Default::default()
        };
        for c in zeno_channels() {
            let rate = projected_decay_rate(&p, c.to, c.from).unwrap();
            assert!((rate - p.gamma_e * c.rate).abs() < 1e-14, "{c:?}");
        }
    }

    #[test]
    fn antiblockade_couplings_match_exact_dynamics() {
        let p = SystemParams {
            omega_r: 1.0,
            delta: 45.0,
            ..Default::default()
        };
        for fit in antiblockade_oracle(&p).unwrap() {
            eprintln!("{fit:?} rel={}", fit.relative_error());
            assert!(fit.relative_error() < 0.05, "{fit:?}");
        }
    }

}
