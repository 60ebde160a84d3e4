//! Steady states and time evolution of Lindblad models.
//!
//! Both routes first split `vec(ρ)` into the invariant blocks found by
//! [`crate::sector`], so only the block holding the populations (for steady
//! states) or the initial state (for evolution) is ever factorized or
//! integrated.

use std::fmt;
use std::str::FromStr;

use faer::linalg::solvers::SolveCore;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Conj, MatMut};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::LindbladModel;
use crate::observables::{fidelity, ObservableError, TargetState};
use crate::operator::{OperatorError, OperatorMatrix, C64, ONE, ZERO};
use crate::sector::{BlockStructure, CyclicSector, ReducedLiouvillian, SymmetricReduction};
use crate::state::{DensityMatrix, StateError};

/// Largest Liouvillian dimension the nullspace method accepts by default.
pub const DEFAULT_DIM_CAP: usize = 250 * 250;
/// Residual bound for nullspace solutions.
pub const NULLSPACE_RESIDUAL_TOL: f64 = 1e-8;
/// `‖dρ/dt‖` at which longtime integration stops.
pub const LONGTIME_DERIVATIVE_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("steady state is not unique (null-space dimension {})", match .dimension { Some(d) => d.to_string(), None => ">= 2".to_string() })]
    NonUnique { dimension: Option<usize> },
    #[error("Liouvillian dimension {dim} exceeds the cap {cap}")]
    TooLarge { dim: usize, cap: usize },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("steady-state residual {residual:e} exceeds {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error("step size underflow (h = {h:e} at t = {t}); the problem is too stiff for explicit integration, use the nullspace steady-state route or a shorter horizon")]
    Stiffness { t: f64, h: f64 },
    #[error("no stationary state reached by t = {t} (‖dρ/dt‖ = {derivative:e})")]
    NotConverged { t: f64, derivative: f64 },
    #[error("tolerance {0:e} outside [1e-12, 1e-4]")]
    Tolerance(f64),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SteadyMethod {
    #[default]
    Nullspace,
    Longtime,
}

impl fmt::Display for SteadyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SteadyMethod::Nullspace => "nullspace",
            SteadyMethod::Longtime => "longtime",
        })
    }
}

impl FromStr for SteadyMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nullspace" => Ok(Self::Nullspace),
            "longtime" => Ok(Self::Longtime),
            other => Err(format!("unknown solver '{other}' (expected nullspace or longtime)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteadyOptions {
    pub method: SteadyMethod,
    /// Integration tolerance of the longtime method.
    pub tol: f64,
    pub dim_cap: usize,
    pub derivative_tol: f64,
    /// Horizon after which longtime integration gives up.
    pub max_time: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self {
            method: SteadyMethod::Nullspace,
            tol: 1e-8,
            dim_cap: DEFAULT_DIM_CAP,
            derivative_tol: LONGTIME_DERIVATIVE_TOL,
            max_time: 1e9,
        }
    }
}

impl SteadyOptions {
    pub fn with_method(method: SteadyMethod) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub rho_ss: DensityMatrix,
    /// `‖L vec(ρ_ss)‖₂`.
    pub residual: f64,
    pub method: SteadyMethod,
    /// Dimension of the block actually solved.
    pub reduced_dim: usize,
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, C64>,
    dim: usize,
}

impl SparseLu {
    fn factor<T>(dim: usize, triplets: T) -> Result<Self, SolverError>
    where
        T: IntoIterator<Item = (usize, usize, C64)>,
    {
        let triplets: Vec<Triplet<usize, usize, C64>> = triplets
            .into_iter()
            .map(|(r, c, v)| Triplet::new(r, c, v))
            .collect();
        let mat = SparseColMat::<usize, C64>::try_new_from_triplets(dim, dim, &triplets)
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| SolverError::Factorization(format!("{e:?}")))?;
        Ok(Self { lu, dim })
    }

    fn solve(&self, rhs: &mut [C64]) {
        let m = MatMut::from_column_major_slice_mut(rhs, self.dim, 1);
        self.lu.solve_in_place_with_conj(Conj::No, m);
    }

    /// Solves `A† x = rhs`.
    fn solve_adjoint(&self, rhs: &mut [C64]) {
        let m = MatMut::from_column_major_slice_mut(rhs, self.dim, 1);
        self.lu.solve_transpose_in_place_with_conj(Conj::Yes, m);
    }

    /// Smallest singular value by inverse iteration on `A†A`.
    fn smallest_singular_value(&self) -> f64 {
        let n = self.dim;
        let mut x: Vec<C64> = (0..n)
            .map(|k| C64::from_polar(1.0, 0.7 * k as f64 + 0.3 * ((k * k) % 13) as f64))
            .collect();
        let scale = 1.0 / norm2(&x);
        x.iter_mut().for_each(|v| *v *= scale);
        let mut previous = f64::INFINITY;
        let mut estimate = f64::INFINITY;
        for _ in 0..500 {
            self.solve_adjoint(&mut x);
            self.solve(&mut x);
            let growth = norm2(&x);
            if !growth.is_finite() || growth == 0.0 {
                return 0.0;
            }
            estimate = 1.0 / growth.sqrt();
            x.iter_mut().for_each(|v| *v /= growth);
            if (previous - estimate).abs() <= 1e-10 * estimate {
                break;
            }
            previous = estimate;
        }
        estimate
    }
}

/// Generator restricted to one invariant block, further reduced to
/// exchange-symmetric vectors when the model and the state allow it.
struct Generator {
    block: ReducedLiouvillian,
    symmetric: Option<SymmetricReduction>,
}

impl Generator {
    fn new(model: &LindbladModel, structure: &BlockStructure, blocks: &[usize]) -> Result<Self, SolverError> {
        let block = ReducedLiouvillian::for_blocks(model, structure, blocks)?;
        let symmetric = SymmetricReduction::new(&block, &model.space.exchange_generators());
        Ok(Self { block, symmetric })
    }

    fn matrix(&self) -> &OperatorMatrix {
        match &self.symmetric {
            Some(s) => &s.matrix,
            None => &self.block.matrix,
        }
    }

    fn dim(&self) -> usize {
        self.matrix().dim()
    }

    /// Working coordinates of `rho`; drops the symmetric reduction when
    /// `rho` is not exchange symmetric.
    fn coordinates(&mut self, rho: &DensityMatrix) -> Vec<C64> {
        let y = self.block.gather(rho.as_slice());
        match self.symmetric.as_ref().and_then(|s| s.compress(&y)) {
            Some(x) => x,
            None => {
                self.symmetric = None;
                y
            }
        }
    }

    fn to_block(&self, x: &[C64]) -> Vec<C64> {
        match &self.symmetric {
            Some(s) => s.expand(x),
            None => x.to_vec(),
        }
    }

    fn to_state(&self, x: &[C64]) -> Result<DensityMatrix, SolverError> {
        Ok(DensityMatrix::from_vec(
            self.block.hilbert_dim,
            self.block.scatter(&self.to_block(x)),
        )?)
    }

    /// Working coordinates holding populations, with their trace weights.
    fn populations(&self) -> Vec<(usize, f64)> {
        let pops = self.block.population_coords();
        match &self.symmetric {
            Some(s) => {
                let mut out: Vec<(usize, f64)> = pops
                    .iter()
                    .filter(|&&k| s.representatives[s.orbit_of[k]] == k)
                    .map(|&k| (s.orbit_of[k], s.orbit_sizes[s.orbit_of[k]] as f64))
                    .collect();
                out.sort_by_key(|&(o, _)| o);
                out
            }
            None => pops.into_iter().map(|k| (k, 1.0)).collect(),
        }
    }

    /// Hermitized, normalized state and its residual on the full block.
    fn finish(&self, x: &[C64]) -> Result<(DensityMatrix, f64), SolverError> {
        let mut rho = self.to_state(x)?;
        rho.hermitize();
        rho.normalize();
        let residual = norm2(&self.block.matrix.apply(&self.block.gather(rho.as_slice()))?);
        Ok((rho, residual))
    }
}

/// Population coordinate whose Liouvillian row has the largest diagonal
/// magnitude; ties go to the lowest index.
fn trace_row(matrix: &OperatorMatrix, populations: &[(usize, f64)]) -> usize {
    let mut best = populations[0].0;
    let mut best_mag = -1.0;
    for &(p, _) in populations {
        let mag = matrix.get(p, p).norm();
        if mag > best_mag {
            best = p;
            best_mag = mag;
        }
    }
    best
}

fn nullspace_steady_state(
    model: &LindbladModel,
    options: &SteadyOptions,
) -> Result<SteadyStateResult, SolverError> {
    let dim = model.dim() * model.dim();
    if dim > options.dim_cap {
        return Err(SolverError::TooLarge {
            dim,
            cap: options.dim_cap,
        });
    }
    let structure = BlockStructure::for_model(model)?;
    let diagonal = structure.diagonal_blocks();
    if diagonal.len() > 1 {
        return Err(SolverError::NonUnique {
            dimension: Some(diagonal.len()),
        });
    }
    let generator = Generator::new(model, &structure, &diagonal)?;
    let matrix = generator.matrix();
    let populations = generator.populations();
    let row = trace_row(matrix, &populations);
    let triplets = matrix
        .iter()
        .filter(|&(r, _, _)| r != row)
        .chain(populations.iter().map(|&(p, w)| (row, p, C64::new(w, 0.0))));
    let lu = SparseLu::factor(generator.dim(), triplets)?;
    let mut x = vec![ZERO; generator.dim()];
    x[row] = ONE;
    lu.solve(&mut x);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonUnique { dimension: None });
    }
    let (rho_ss, residual) = generator.finish(&x)?;
    if !(residual < NULLSPACE_RESIDUAL_TOL) {
        return Err(SolverError::Residual {
            residual,
            bound: NULLSPACE_RESIDUAL_TOL,
        });
    }
    Ok(SteadyStateResult {
        rho_ss,
        residual,
        method: SteadyMethod::Nullspace,
        reduced_dim: generator.dim(),
    })
}

/// Stationary state of `model`.
pub fn steady_state(model: &LindbladModel, options: &SteadyOptions) -> Result<SteadyStateResult, SolverError> {
    match options.method {
        SteadyMethod::Nullspace => nullspace_steady_state(model, options),
        SteadyMethod::Longtime => {
            longtime_steady_state(model, &DensityMatrix::maximally_mixed(model.dim()), options)
        }
    }
}

/// Integrates from `rho0` until `‖dρ/dt‖ < options.derivative_tol`.
pub fn longtime_steady_state(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    options: &SteadyOptions,
) -> Result<SteadyStateResult, SolverError> {
    check_tol(options.tol)?;
    let structure = BlockStructure::for_model(model)?;
    let blocks = structure.support_blocks(rho0.as_slice(), model.dim());
    let mut generator = Generator::new(model, &structure, &blocks)?;
    let mut y = generator.coordinates(rho0);
    // Modes below the absolute tolerance would otherwise stall at the
    // stability boundary instead of decaying.
    let atol = options.tol.min(1e-2 * options.derivative_tol);
    let mut rk = DormandPrince::new(generator.matrix(), options.tol, atol, &y);
    let mut t = 0.0;
    while norm2(&generator.to_block(&rk.derivative)) >= options.derivative_tol {
        if t >= options.max_time {
            return Err(SolverError::NotConverged {
                t,
                derivative: norm2(&generator.to_block(&rk.derivative)),
            });
        }
        rk.step(&mut y, &mut t, options.max_time)?;
    }
    log::debug!(
        "longtime steady state at t = {t:.4e} after {} steps ({} rejected)",
        rk.accepted,
        rk.rejected
    );
    let reduced_dim = generator.dim();
    let (rho_ss, residual) = generator.finish(&y)?;
    Ok(SteadyStateResult {
        rho_ss,
        residual,
        method: SteadyMethod::Longtime,
        reduced_dim,
    })
}

/// Singular-value evidence for a one-dimensional Liouvillian null space.
#[derive(Clone, Debug, PartialEq)]
pub struct UniquenessReport {
    /// Upper bound on the smallest singular value, `‖L v‖/‖v‖` at the
    /// computed steady state.
    pub smallest: f64,
    /// Estimate of a lower bound on the second-smallest singular value.
    pub second: f64,
    /// Smallest singular value of each block without populations.
    pub off_diagonal: Vec<f64>,
}

impl UniquenessReport {
    pub fn ratio(&self) -> f64 {
        self.second / self.smallest.max(f64::MIN_POSITIVE)
    }
}

/// Probes the null space of the Liouvillian.
///
/// The Liouvillian is block diagonal, so its singular values are those of
/// its blocks. On the population block `L_p`, the bordered matrix
/// `[[L_p, w], [v†, 0]]` (trace functional `w`, normalized steady state
/// `v`) has a smallest singular value below the second-smallest one of
/// `L_p` by interlacing. The remaining blocks are probed directly. On the
/// full model each block is first split into the character sectors of the
/// cyclic permutation of the atoms, which is unitary and so preserves the
/// singular values.
pub fn uniqueness_probe(model: &LindbladModel) -> Result<UniquenessReport, SolverError> {
    let structure = BlockStructure::for_model(model)?;
    let diagonal = structure.diagonal_blocks();
    if diagonal.len() > 1 {
        return Err(SolverError::NonUnique {
            dimension: Some(diagonal.len()),
        });
    }
    let full = crate::superop::liouvillian(&model.h, &model.collapse)?;
    let ss = nullspace_steady_state(model, &SteadyOptions::default())?;
    let smallest = ss.residual / norm2(ss.rho_ss.as_slice());
    // The 3-cycle of the atoms has the largest order among the generators.
    let cycle = model.space.exchange_generators().pop();

    let mut second_diag = f64::INFINITY;
    let mut off_diagonal = Vec::new();
    for b in 0..structure.blocks.len() {
        let block = ReducedLiouvillian::restrict(&full, structure.entries(&[b]))?;
        let v = block.gather(ss.rho_ss.as_slice());
        let mut w = vec![ZERO; block.dim()];
        for p in block.population_coords() {
            w[p] = ONE;
        }
        let parts: Vec<(OperatorMatrix, Vec<C64>, Vec<C64>)> =
            match cycle.as_deref().and_then(|g| CyclicSector::split(&block, g)) {
                Some(sectors) => sectors
                    .into_iter()
                    .map(|s| {
                        let (sv, sw) = (s.project(&v), s.project(&w));
                        (s.matrix, sv, sw)
                    })
                    .collect(),
                None => vec![(block.matrix, v, w)],
            };
        for (matrix, v, w) in parts {
            let n = matrix.dim();
            let (vnorm, wnorm) = (norm2(&v), norm2(&w));
            let sigma = if diagonal.contains(&b) && vnorm > 1e-8 && wnorm > 0.0 {
                // Bordering with the right and left null vectors removes the
                // null direction; the smallest singular value that remains
                // bounds the second singular value of the block from below.
                let bordered = matrix
                    .iter()
                    .chain(w.iter().enumerate().map(|(k, x)| (k, n, *x / wnorm)))
                    .chain(v.iter().enumerate().map(|(k, x)| (n, k, x.conj() / vnorm)))
                    .filter(|(_, _, x)| *x != ZERO);
                SparseLu::factor(n + 1, bordered)?.smallest_singular_value()
            } else {
                SparseLu::factor(n, matrix.iter())?.smallest_singular_value()
            };
            log::debug!("uniqueness probe: block {b} (dim {n}) smallest singular value {sigma:.3e}");
            if diagonal.contains(&b) {
                second_diag = second_diag.min(sigma);
            } else {
                off_diagonal.push(sigma);
            }
        }
    }
    let second = off_diagonal.iter().copied().fold(second_diag, f64::min);
    Ok(UniquenessReport {
        smallest,
        second,
        off_diagonal,
    })
}

fn check_tol(tol: f64) -> Result<(), SolverError> {
    if !(1e-12..=1e-4).contains(&tol) {
        return Err(SolverError::Tolerance(tol));
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Radius of the left half-disk on which the stability polynomial stays
/// at or below one in modulus. Slowly decaying oscillations near the
/// imaginary axis grow without bound past it, unseen by the error
/// estimate while their amplitude is below the tolerance.
const STABLE_RADIUS: f64 = 0.8;

/// Largest absolute row sum, an upper bound on the spectral radius.
fn gershgorin_bound(op: &OperatorMatrix) -> f64 {
    (0..op.dim())
        .map(|r| op.row(r).1.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Adaptive Dormand–Prince integrator for `y' = M y`.
struct DormandPrince<'a> {
    op: &'a OperatorMatrix,
    rtol: f64,
    atol: f64,
    h: f64,
    /// Steps up to this size keep every eigenvalue of `h M` inside the
    /// region where the method does not amplify.
    h_max: f64,
    /// `M y` at the current point (first-same-as-last).
    derivative: Vec<C64>,
    k: Vec<Vec<C64>>,
    stage: Vec<C64>,
    accepted: usize,
    rejected: usize,
}

impl<'a> DormandPrince<'a> {
    fn new(op: &'a OperatorMatrix, rtol: f64, atol: f64, y: &[C64]) -> Self {
        let n = y.len();
        let mut derivative = vec![ZERO; n];
        op.apply_into(y, &mut derivative);
        let (ny, nf) = (norm2(y), norm2(&derivative));
        let h_max = STABLE_RADIUS / gershgorin_bound(op).max(1e-300);
        let h = if nf > 1e-300 { 0.01 * ny.max(1e-5) / nf } else { 1.0 }.min(h_max);
        log::debug!("step cap {h_max:.3e}");
        Self {
            op,
            rtol,
            atol,
            h,
            h_max,
            derivative,
            k: vec![vec![ZERO; n]; 6],
            stage: vec![ZERO; n],
            accepted: 0,
            rejected: 0,
        }
    }

    /// One accepted step, never past `t_max`.
    fn step(&mut self, y: &mut [C64], t: &mut f64, t_max: f64) -> Result<(), SolverError> {
        let n = y.len();
        loop {
            let h = self.h.min(t_max - *t);
            if h <= 1e-13 * t.abs().max(1.0) {
                return Err(SolverError::Stiffness { t: *t, h });
            }
            self.k[0].copy_from_slice(&self.derivative);
            for s in 1..6 {
                let a = &A[s];
                for i in 0..n {
                    let mut acc = ZERO;
                    for (j, aj) in a.iter().enumerate().take(s) {
                        acc += self.k[j][i] * *aj;
                    }
                    self.stage[i] = y[i] + acc * h;
                }
                self.op.apply_into(&self.stage, &mut self.k[s]);
            }
            // Fifth-order solution into `stage`, its derivative into k7.
            for i in 0..n {
                let mut acc = ZERO;
                for j in 0..6 {
                    acc += self.k[j][i] * A[6][j];
                }
                self.stage[i] = y[i] + acc * h;
            }
            let mut k7 = vec![ZERO; n];
            self.op.apply_into(&self.stage, &mut k7);
            let mut err_sq = 0.0;
            for i in 0..n {
                let mut e = k7[i] * E[6];
                for j in 0..6 {
                    e += self.k[j][i] * E[j];
                }
                let scale = self.atol + self.rtol * y[i].norm().max(self.stage[i].norm());
                err_sq += (e * h).norm_sqr() / (scale * scale);
            }
            let err = (err_sq / n as f64).sqrt();
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            if err <= 1.0 {
                y.copy_from_slice(&self.stage);
                self.derivative = k7;
                *t += h;
                if h < self.h {
                    // A step shortened to hit t_max says nothing about the next one.
                    self.h = self.h.max(h * factor);
                } else {
                    self.h = h * factor;
                }
                self.h = self.h.min(self.h_max);
                self.accepted += 1;
                return Ok(());
            }
            self.h = h * factor.min(1.0);
            self.rejected += 1;
        }
    }
}

/// Observables recorded at one time point.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    /// Fidelity to `W`, or NaN when the basis cannot represent it.
    pub fidelity: f64,
    pub purity: f64,
    pub min_eigenvalue: f64,
    /// `Tr ρ − 1` before renormalization.
    pub trace_drift: f64,
    /// Hermiticity error before symmetrization.
    pub hermiticity_drift: f64,
    pub populations: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    /// Full states, when requested.
    pub states: Option<Vec<DensityMatrix>>,
    pub steps: usize,
    pub rejected_steps: usize,
}

impl TrajectoryResult {
    pub fn fidelities(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.fidelity).collect()
    }

    pub fn max_trace_drift(&self) -> f64 {
        self.snapshots
            .iter()
            .map(|s| s.trace_drift.abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveOptions {
    pub t_end: f64,
    /// Number of equally spaced records, including both end points.
    pub n_record: usize,
    pub tol: f64,
    pub record_states: bool,
}

/// Integrates the master equation from `rho0`, recording observables at
/// `n_record` equally spaced times in `[0, t_end]`.
pub fn evolve(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    t_end: f64,
    n_record: usize,
    tol: f64,
) -> Result<TrajectoryResult, SolverError> {
    evolve_with(
        model,
        rho0,
        &EvolveOptions {
            t_end,
            n_record,
            tol,
            record_states: false,
        },
    )
}

pub fn evolve_with(
    model: &LindbladModel,
    rho0: &DensityMatrix,
    options: &EvolveOptions,
) -> Result<TrajectoryResult, SolverError> {
    check_tol(options.tol)?;
    if rho0.dim() != model.dim() {
        return Err(StateError::Shape {
            expected: model.dim() * model.dim(),
            found: rho0.dim() * rho0.dim(),
        }
        .into());
    }
    if options.n_record < 2 || !(options.t_end > 0.0) {
        return Err(SolverError::Invalid(format!(
            "need n_record >= 2 and t_end > 0 (got {} and {})",
            options.n_record, options.t_end
        )));
    }
    let target = TargetState::w(&model.space).ok();
    let structure = BlockStructure::for_model(model)?;
    let blocks = structure.support_blocks(rho0.as_slice(), model.dim());
    let mut generator = Generator::new(model, &structure, &blocks)?;
    let mut y = generator.coordinates(rho0);
    let mut rk = DormandPrince::new(generator.matrix(), options.tol, options.tol, &y);

    let times: Vec<f64> = (0..options.n_record)
        .map(|k| options.t_end * k as f64 / (options.n_record - 1) as f64)
        .collect();
    let mut snapshots = Vec::with_capacity(times.len());
    let mut states = options.record_states.then(Vec::new);
    let mut t = 0.0;
    for &t_rec in &times {
        while t < t_rec {
            rk.step(&mut y, &mut t, t_rec)?;
        }
        let mut rho = generator.to_state(&y)?;
        let trace_drift = rho.trace().re - 1.0;
        let hermiticity_drift = rho.hermiticity_error();
        log::debug!("t = {t_rec:.4e}: trace drift {trace_drift:.3e}, hermiticity drift {hermiticity_drift:.3e}");
        rho.hermitize();
        rho.normalize();
        let fid = match &target {
            Some(w) => fidelity(&rho, w)?,
            None => f64::NAN,
        };
        snapshots.push(Snapshot {
            fidelity: fid,
            purity: rho.purity(),
            min_eigenvalue: rho.min_eigenvalue()?,
            trace_drift,
            hermiticity_drift,
            populations: (0..model.dim()).map(|i| rho.get(i, i).re).collect(),
        });
        if let Some(states) = states.as_mut() {
            states.push(rho);
        }
    }
    log::debug!("evolution: {} steps, {} rejected", rk.accepted, rk.rejected);
    Ok(TrajectoryResult {
        times,
        snapshots,
        states,
        steps: rk.accepted,
        rejected_steps: rk.rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StateSpace;

    fn custom(dim: usize, h: OperatorMatrix, collapse: Vec<OperatorMatrix>) -> LindbladModel {
        let labels = (0..dim).map(|i| i.to_string()).collect();
        LindbladModel::new(StateSpace::Custom { labels }, h, collapse).unwrap()
    }

    #[test]
    fn decay_to_ground_state() {
        let l = OperatorMatrix::dyad(2, 0, 1, C64::new(0.5f64.sqrt(), 0.0)).unwrap();
        let model = custom(2, OperatorMatrix::zeros(2), vec![l]);
        for method in [SteadyMethod::Nullspace, SteadyMethod::Longtime] {
            let ss = steady_state(&model, &SteadyOptions::with_method(method)).unwrap();
            assert!((ss.rho_ss.get(0, 0).re - 1.0).abs() < 1e-9, "{method}");
            assert!(ss.rho_ss.get(1, 1).norm() < 1e-9);
        }
    }

    #[test]
    fn decoupled_subspaces_are_non_unique() {
        let l = OperatorMatrix::dyad(3, 0, 1, ONE).unwrap();
        let model = custom(3, OperatorMatrix::zeros(3), vec![l]);
        let err = steady_state(&model, &SteadyOptions::default()).unwrap_err();
        assert!(matches!(err, SolverError::NonUnique { dimension: Some(2) }));
    }

    #[test]
    fn rabi_oscillation() {
        let omega = 0.7;
        let h = OperatorMatrix::from_triplets(2, [(0, 1, C64::new(omega, 0.0)), (1, 0, C64::new(omega, 0.0))])
            .unwrap();
        let model = custom(2, h, vec![]);
        let traj = evolve(&model, &DensityMatrix::basis(2, 1), 5.0, 11, 1e-10).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.snapshots) {
            assert!((s.populations[0] - (omega * t).sin().powi(2)).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn tolerance_range_is_enforced() {
        let model = custom(2, OperatorMatrix::zeros(2), vec![]);
        let rho = DensityMatrix::basis(2, 0);
        assert!(matches!(evolve(&model, &rho, 1.0, 2, 1e-3), Err(SolverError::Tolerance(_))));
    }
}
