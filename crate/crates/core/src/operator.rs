//! Sparse complex operators over the atoms-plus-cavity product space.
//!
//! Operators are stored in compressed-row form. The composite space is
//! always ordered `atom1 ⊗ atom2 ⊗ atom3 ⊗ cavity`, and the Kronecker
//! product uses the row convention `row = r_a · dim_b + r_b`.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Entries with magnitude below this are dropped at construction.
pub const DROP_TOL: f64 = 1e-15;

/// Largest dimension a constructed operator may have.
pub const MAX_DIM: usize = 1 << 24;

/// Number of internal levels per atom.
pub const ATOM_LEVELS: usize = 5;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("shape mismatch: expected dimension {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("dimension {dim} exceeds the configured maximum {max}")]
    Sizing { dim: u128, max: usize },
    #[error("entry ({row}, {col}) out of range for dimension {dim}")]
    Index { row: usize, col: usize, dim: usize },
    #[error("site {0} is not in 1..=4 (atoms 1-3, cavity 4)")]
    Site(usize),
    #[error("cannot parse basis label {0:?}")]
    Label(String),
}

/// Internal atomic level, in index order `0, 1, e, r, p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Zero,
    One,
    Excited,
    Rydberg,
    RydbergP,
}

impl Level {
    pub const ALL: [Level; ATOM_LEVELS] = [
        Level::Zero,
        Level::One,
        Level::Excited,
        Level::Rydberg,
        Level::RydbergP,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn symbol(self) -> char {
        match self {
            Level::Zero => '0',
            Level::One => '1',
            Level::Excited => 'e',
            Level::Rydberg => 'r',
            Level::RydbergP => 'p',
        }
    }

    pub fn from_symbol(c: char) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.symbol() == c)
    }

    /// Single-atom dyad `|self⟩⟨other|` on the 5-level space.
    pub fn dyad(self, other: Level) -> OperatorMatrix {
        OperatorMatrix::dyad(ATOM_LEVELS, self.index(), other.index(), ONE)
            .expect("level indices are in range")
    }
}

/// A product basis state `|a1 a2 a3⟩ ⊗ |n⟩_c`.
///
/// The derived ordering is lexicographic in (atom1, atom2, atom3, photon),
/// which matches the tensor-product index order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisLabel {
    pub atoms: [Level; 3],
    pub photon: usize,
}

impl BasisLabel {
    pub fn new(atoms: [Level; 3], photon: usize) -> Self {
        Self { atoms, photon }
    }

    /// Parse a three-symbol atomic string such as `"e01"`.
    pub fn atoms_from_str(s: &str) -> Option<[Level; 3]> {
        let levels: Vec<Level> = s.chars().map(Level::from_symbol).collect::<Option<_>>()?;
        levels.try_into().ok()
    }

    /// Position in the product basis with cavity truncation `n_c`.
    pub fn index(&self, n_c: usize) -> usize {
        let [a, b, c] = self.atoms;
        ((a.index() * ATOM_LEVELS + b.index()) * ATOM_LEVELS + c.index()) * n_c + self.photon
    }

    pub fn from_index(index: usize, n_c: usize) -> Self {
        let photon = index % n_c;
        let mut rest = index / n_c;
        let c = rest % ATOM_LEVELS;
        rest /= ATOM_LEVELS;
        let b = rest % ATOM_LEVELS;
        let a = rest / ATOM_LEVELS;
        Self {
            atoms: [Level::ALL[a], Level::ALL[b], Level::ALL[c]],
            photon,
        }
    }

    pub fn atom_string(&self) -> String {
        self.atoms.iter().map(|l| l.symbol()).collect()
    }
}

impl fmt::Display for BasisLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.atom_string(), self.photon)
    }
}

impl FromStr for BasisLabel {
    type Err = OperatorError;

    /// Accepts `"e01,1"` or `"e01"` (vacuum implied).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || OperatorError::Label(s.to_string());
        let (atoms, photon) = match s.split_once(',') {
            Some((a, n)) => (a.trim(), n.trim().parse::<usize>().map_err(|_| bad())?),
            None => (s.trim(), 0),
        };
        let atoms = BasisLabel::atoms_from_str(atoms).ok_or_else(bad)?;
        Ok(BasisLabel { atoms, photon })
    }
}

/// Square sparse complex matrix in compressed-row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl OperatorMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim).collect(),
            vals: vec![ONE; dim],
        }
    }

    /// `value · |row⟩⟨col|`.
    pub fn dyad(dim: usize, row: usize, col: usize, value: C64) -> Result<Self, OperatorError> {
        Self::from_triplets(dim, [(row, col, value)])
    }

    /// Builds from `(row, col, value)` triplets. Duplicates are summed and
    /// entries below [`DROP_TOL`] in magnitude are discarded.
    pub fn from_triplets<T>(dim: usize, triplets: T) -> Result<Self, OperatorError>
    where
        T: IntoIterator<Item = (usize, usize, C64)>,
    {
        check_dim(dim as u128)?;
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
        for (r, c, v) in triplets {
            if r >= dim || c >= dim {
                return Err(OperatorError::Index { row: r, col: c, dim });
            }
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v.norm() >= DROP_TOL {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            dim,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Converts a dense matrix, dropping entries below `DROP_TOL`.
    pub fn from_dense(dense: &Mat<C64>) -> Result<Self, OperatorError> {
        if dense.nrows() != dense.ncols() {
            return Err(OperatorError::Shape {
                expected: dense.nrows(),
                found: dense.ncols(),
            });
        }
        let n = dense.nrows();
        let triplets = (0..n).flat_map(|r| (0..n).map(move |c| (r, c, dense[(r, c)])));
        Self::from_triplets(n, triplets)
    }

    pub fn to_dense(&self) -> Mat<C64> {
        let mut m = Mat::<C64>::zeros(self.dim, self.dim);
        for (r, c, v) in self.iter() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    /// Column indices and values of one row.
    pub fn row(&self, r: usize) -> (&[usize], &[C64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => ZERO,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn dagger(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v.conj())))
            .expect("transpose preserves the shape")
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (r, c, v * factor)))
            .expect("scaling preserves the shape")
    }

    pub fn add(&self, other: &Self) -> Result<Self, OperatorError> {
        self.check_same(other)?;
        Self::from_triplets(self.dim, self.iter().chain(other.iter()))
    }

    pub fn sub(&self, other: &Self) -> Result<Self, OperatorError> {
        self.add(&other.scale(-ONE))
    }

    /// Sum of many operators of one dimension.
    pub fn sum<'a, T>(dim: usize, terms: T) -> Result<Self, OperatorError>
    where
        T: IntoIterator<Item = &'a OperatorMatrix>,
    {
        let mut triplets = Vec::new();
        for t in terms {
            if t.dim != dim {
                return Err(OperatorError::Shape {
                    expected: dim,
                    found: t.dim,
                });
            }
            triplets.extend(t.iter());
        }
        Self::from_triplets(dim, triplets)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, OperatorError> {
        self.check_same(other)?;
        let mut triplets = Vec::new();
        for (r, k, a) in self.iter() {
            let (cols, vals) = other.row(k);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &b)| (r, c, a * b)));
        }
        Self::from_triplets(self.dim, triplets)
    }

    pub fn commutator(&self, other: &Self) -> Result<Self, OperatorError> {
        self.matmul(other)?.sub(&other.matmul(self)?)
    }

    pub fn kron(&self, other: &Self) -> Result<Self, OperatorError> {
        let dim = self.dim as u128 * other.dim as u128;
        check_dim(dim)?;
        let nb = other.dim;
        let mut triplets = Vec::with_capacity(self.nnz() * other.nnz());
        for (ra, ca, a) in self.iter() {
            for (rb, cb, b) in other.iter() {
                triplets.push((ra * nb + rb, ca * nb + cb, a * b));
            }
        }
        Self::from_triplets(dim as usize, triplets)
    }

    /// `self · x` for a dense vector.
    pub fn apply(&self, x: &[C64]) -> Result<Vec<C64>, OperatorError> {
        if x.len() != self.dim {
            return Err(OperatorError::Shape {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut y = vec![ZERO; self.dim];
        self.apply_into(x, &mut y);
        Ok(y)
    }

    /// Unchecked product into a preallocated buffer.
    pub(crate) fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        for (r, out) in y.iter_mut().enumerate() {
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            let mut acc = ZERO;
            for (&c, &v) in self.cols[span.clone()].iter().zip(&self.vals[span]) {
                acc += v * x[c];
            }
            *out = acc;
        }
    }

    /// `⟨bra|self|ket⟩` with `bra` conjugated.
    pub fn matrix_element(&self, bra: &[C64], ket: &[C64]) -> Result<C64, OperatorError> {
        if bra.len() != self.dim {
            return Err(OperatorError::Shape {
                expected: self.dim,
                found: bra.len(),
            });
        }
        let y = self.apply(ket)?;
        Ok(bra.iter().zip(&y).map(|(b, v)| b.conj() * v).sum())
    }

    /// Largest element-wise deviation from another operator.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, OperatorError> {
        Ok(self
            .sub(other)?
            .vals
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.norm())))
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0_f64, |m, v| m.max(v.norm()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.dagger())
            .map(|d| d <= tol)
            .unwrap_or(false)
    }

    fn check_same(&self, other: &Self) -> Result<(), OperatorError> {
        if self.dim != other.dim {
            return Err(OperatorError::Shape {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }
}

fn check_dim(dim: u128) -> Result<(), OperatorError> {
    if dim == 0 || dim > MAX_DIM as u128 {
        return Err(OperatorError::Sizing { dim, max: MAX_DIM });
    }
    Ok(())
}

pub fn kron(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix, OperatorError> {
    a.kron(b)
}

pub fn dagger(op: &OperatorMatrix) -> OperatorMatrix {
    op.dagger()
}

/// Local dimensions of the four tensor factors.
pub fn site_dims(n_c: usize) -> [usize; 4] {
    [ATOM_LEVELS, ATOM_LEVELS, ATOM_LEVELS, n_c]
}

/// Places `op` on `site` (1-3 for atoms, 4 for the cavity) and identities
/// elsewhere, in the order atom1 ⊗ atom2 ⊗ atom3 ⊗ cavity.
pub fn embed(op: &OperatorMatrix, site: usize, n_c: usize) -> Result<OperatorMatrix, OperatorError> {
    if !(1..=4).contains(&site) {
        return Err(OperatorError::Site(site));
    }
    let dims = site_dims(n_c);
    let local = dims[site - 1];
    if op.dim() != local {
        return Err(OperatorError::Shape {
            expected: local,
            found: op.dim(),
        });
    }
    let left: usize = dims[..site - 1].iter().product();
    let right: usize = dims[site..].iter().product();
    let full = left * local * right;
    check_dim(full as u128)?;
    // I_left ⊗ op ⊗ I_right, written out directly.
    let mut triplets = Vec::with_capacity(left * right * op.nnz());
    for l in 0..left {
        for (r, c, v) in op.iter() {
            let row_base = (l * local + r) * right;
            let col_base = (l * local + c) * right;
            for k in 0..right {
                triplets.push((row_base + k, col_base + k, v));
            }
        }
    }
    OperatorMatrix::from_triplets(full, triplets)
}

/// Truncated cavity annihilation operator on `n_c` Fock levels.
pub fn annihilation(n_c: usize) -> OperatorMatrix {
    let triplets = (1..n_c).map(|n| (n - 1, n, C64::new((n as f64).sqrt(), 0.0)));
    OperatorMatrix::from_triplets(n_c, triplets).expect("n_c > 0")
}

/// Product basis state as a dense vector.
pub fn basis_vector(dim: usize, index: usize) -> Vec<C64> {
    let mut v = vec![ZERO; dim];
    v[index] = ONE;
    v
}
