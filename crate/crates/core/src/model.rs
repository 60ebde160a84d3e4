//! The full atoms-plus-cavity Lindblad model.
//!
//! All frequencies and rates are in units of the cavity coupling `g`
//! (normally `g = 1`). The Rydberg part is written in the frame rotating
//! with the two Rydberg drives, so `|r⟩` carries `−2Δ` and `|p⟩` carries `−Δ`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effective::EffectiveState;
use crate::operator::{
    annihilation, embed, BasisLabel, Level, OperatorError, OperatorMatrix, ATOM_LEVELS, C64,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    Param {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("cavity truncation n_c = {0} must be at least 2")]
    Truncation(usize),
    #[error("unknown parameter name {0:?}")]
    UnknownParam(String),
    #[error("Hamiltonian is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Physical parameters of one run, in units of `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemParams {
    pub g: f64,
    /// Classical drive on `|1⟩ ↔ |e⟩`.
    pub omega: f64,
    /// Rydberg drives on `|0⟩ ↔ |r⟩` and `|1⟩ ↔ |p⟩`.
    pub omega_r: f64,
    pub delta: f64,
    /// Same-state Rydberg interaction; `None` means the antiblockade
    /// resonance `2Δ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_rr: Option<f64>,
    #[serde(default)]
    pub u_rp: f64,
    /// Decay rate of each Rydberg level.
    pub gamma: f64,
    pub gamma_e: f64,
    pub kappa: f64,
    /// Number of retained photon levels.
    pub n_c: usize,
}

impl Default for SystemParams {
    /// Fig. 3(c)-style operating point with a two-level cavity truncation.
    fn default() -> Self {
        Self {
            g: 1.0,
            omega: 0.05,
            omega_r: 1.0,
            delta: 45.0,
            u_rr: None,
            u_rp: 0.0,
            gamma: 0.002,
            gamma_e: 0.1,
            kappa: 0.0,
            n_c: 2,
        }
    }
}

impl SystemParams {
    pub const FIELDS: [&'static str; 9] = [
        "g", "omega", "omega_r", "delta", "u_rr", "u_rp", "gamma", "gamma_e", "kappa",
    ];

    pub fn u_rr(&self) -> f64 {
        self.u_rr.unwrap_or(2.0 * self.delta)
    }

    pub fn dim(&self) -> usize {
        ATOM_LEVELS.pow(3) * self.n_c
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let checks = [
            ("g", self.g),
            ("omega", self.omega),
            ("omega_r", self.omega_r),
            ("delta", self.delta),
            ("u_rr", self.u_rr()),
            ("u_rp", self.u_rp),
            ("gamma", self.gamma),
            ("gamma_e", self.gamma_e),
            ("kappa", self.kappa),
        ];
        for (name, value) in checks {
            if !value.is_finite() {
                return Err(ModelError::Param {
                    name,
                    value,
                    reason: "must be finite",
                });
            }
            if value < 0.0 {
                return Err(ModelError::Param {
                    name,
                    value,
                    reason: "must be non-negative",
                });
            }
        }
        if self.n_c < 2 {
            return Err(ModelError::Truncation(self.n_c));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<f64, ModelError> {
        Ok(match name {
            "g" => self.g,
            "omega" => self.omega,
            "omega_r" => self.omega_r,
            "delta" => self.delta,
            "u_rr" => self.u_rr(),
            "u_rp" => self.u_rp,
            "gamma" => self.gamma,
            "gamma_e" => self.gamma_e,
            "kappa" => self.kappa,
            other => return Err(ModelError::UnknownParam(other.to_string())),
        })
    }

    /// Sets a named field. Setting `delta` leaves `u_rr` tracking `2Δ`
    /// unless it was overridden.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), ModelError> {
        match name {
            "g" => self.g = value,
            "omega" => self.omega = value,
            "omega_r" => self.omega_r = value,
            "delta" => self.delta = value,
            "u_rr" => self.u_rr = Some(value),
            "u_rp" => self.u_rp = value,
            "gamma" => self.gamma = value,
            "gamma_e" => self.gamma_e = value,
            "kappa" => self.kappa = value,
            other => return Err(ModelError::UnknownParam(other.to_string())),
        }
        Ok(())
    }
}

/// Which Hilbert space a model lives on.
#[derive(Clone, Debug, PartialEq)]
pub enum StateSpace {
    /// Three five-level atoms and a cavity with `n_c` Fock levels.
    Full { n_c: usize },
    /// The 18-state reduced space of [`EffectiveState`].
    Effective,
    /// Anything else, with free-form labels.
    Custom { labels: Vec<String> },
}

impl StateSpace {
    pub fn dim(&self) -> usize {
        match self {
            StateSpace::Full { n_c } => ATOM_LEVELS.pow(3) * n_c,
            StateSpace::Effective => EffectiveState::ALL.len(),
            StateSpace::Custom { labels } => labels.len(),
        }
    }

    pub fn label(&self, index: usize) -> String {
        match self {
            StateSpace::Full { n_c } => BasisLabel::from_index(index, *n_c).to_string(),
            StateSpace::Effective => EffectiveState::ALL[index].name().to_string(),
            StateSpace::Custom { labels } => labels[index].clone(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.dim()).map(|i| self.label(i)).collect()
    }

    /// Looks up a state by its label. The full space accepts `"e01,1"` or
    /// `"e01"` (vacuum); the effective space accepts names such as `"D3"`.
    pub fn index_of(&self, label: &str) -> Option<usize> {
        match self {
            StateSpace::Full { n_c } => {
                let l: BasisLabel = label.parse().ok()?;
                (l.photon < *n_c).then(|| l.index(*n_c))
            }
            StateSpace::Effective => EffectiveState::from_name(label).map(|s| s.index()),
            StateSpace::Custom { labels } => labels.iter().position(|l| l == label),
        }
    }

    /// Basis permutations generating the exchange symmetry of the three
    /// atoms; empty when exchange does not act by permuting basis states.
    pub fn exchange_generators(&self) -> Vec<Vec<usize>> {
        let StateSpace::Full { n_c } = *self else {
            return Vec::new();
        };
        [[1, 0, 2], [1, 2, 0]]
            .iter()
            .map(|perm| {
                (0..self.dim())
                    .map(|i| {
                        let l = BasisLabel::from_index(i, n_c);
                        let atoms = [l.atoms[perm[0]], l.atoms[perm[1]], l.atoms[perm[2]]];
                        BasisLabel::new(atoms, l.photon).index(n_c)
                    })
                    .collect()
            })
            .collect()
    }

    /// Index of the product state `|atoms⟩ ⊗ |0⟩_c`, when representable.
    pub fn product_index(&self, atoms: [Level; 3]) -> Option<usize> {
        match self {
            StateSpace::Full { n_c } => Some(BasisLabel::new(atoms, 0).index(*n_c)),
            StateSpace::Effective => EffectiveState::from_atoms(atoms).map(|s| s.index()),
            StateSpace::Custom { labels } => {
                let name: String = atoms.iter().map(|l| l.symbol()).collect();
                labels.iter().position(|l| *l == name)
            }
        }
    }
}

/// A Hamiltonian and its collapse operators over one shared basis.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub space: StateSpace,
    pub h: OperatorMatrix,
    pub collapse: Vec<OperatorMatrix>,
}

impl LindbladModel {
    pub fn new(
        space: StateSpace,
        h: OperatorMatrix,
        collapse: Vec<OperatorMatrix>,
    ) -> Result<Self, ModelError> {
        let dim = space.dim();
        for op in std::iter::once(&h).chain(&collapse) {
            if op.dim() != dim {
                return Err(OperatorError::Shape {
                    expected: dim,
                    found: op.dim(),
                }
                .into());
            }
        }
        let deviation = h.max_abs_diff(&h.dagger())?;
        if deviation > 1e-12 * h.max_abs().max(1.0) {
            return Err(ModelError::NotHermitian(deviation));
        }
        Ok(Self { space, h, collapse })
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }
}

/// Ordered list of all product basis states.
pub fn build_basis(params: &SystemParams) -> Vec<BasisLabel> {
    (0..params.dim())
        .map(|i| BasisLabel::from_index(i, params.n_c))
        .collect()
}

fn atom_op(op: &OperatorMatrix, site: usize, n_c: usize) -> Result<OperatorMatrix, ModelError> {
    Ok(embed(op, site, n_c)?)
}

/// `H₁ = Σᵢ |e⟩ᵢ⟨1| + h.c.`, the classical-drive part of the Zeno Hamiltonian.
pub fn build_zeno_drive(params: &SystemParams) -> Result<OperatorMatrix, ModelError> {
    let n_c = params.n_c;
    let raise = Level::Excited.dyad(Level::One);
    let mut terms = Vec::new();
    for site in 1..=3 {
        let up = atom_op(&raise, site, n_c)?;
        terms.push(up.dagger());
        terms.push(up);
    }
    Ok(OperatorMatrix::sum(params.dim(), &terms)?)
}

/// `H₂ = Σᵢ |e⟩ᵢ⟨0| a + h.c.`, the cavity part of the Zeno Hamiltonian.
pub fn build_zeno_coupling(params: &SystemParams) -> Result<OperatorMatrix, ModelError> {
    let n_c = params.n_c;
    let a = embed(&annihilation(n_c), 4, n_c)?;
    let raise = Level::Excited.dyad(Level::Zero);
    let mut terms = Vec::new();
    for site in 1..=3 {
        let up = atom_op(&raise, site, n_c)?.matmul(&a)?;
        terms.push(up.dagger());
        terms.push(up);
    }
    Ok(OperatorMatrix::sum(params.dim(), &terms)?)
}

/// `H_I^Z = Ω H₁ + g H₂`.
pub fn build_h_z(params: &SystemParams) -> Result<OperatorMatrix, ModelError> {
    params.validate()?;
    let drive = build_zeno_drive(params)?.scale(C64::new(params.omega, 0.0));
    let coupling = build_zeno_coupling(params)?.scale(C64::new(params.g, 0.0));
    Ok(drive.add(&coupling)?)
}

/// Diagonal Rydberg energy of an atomic configuration: single-atom
/// detunings plus the pairwise interactions of all three pairs.
pub fn rydberg_energy(atoms: [Level; 3], params: &SystemParams) -> f64 {
    let single: f64 = atoms
        .iter()
        .map(|l| match l {
            Level::Rydberg => -2.0 * params.delta,
            Level::RydbergP => -params.delta,
            _ => 0.0,
        })
        .sum();
    let mut pairs = 0.0;
    for i in 0..3 {
        for j in i + 1..3 {
            pairs += match (atoms[i], atoms[j]) {
                (Level::Rydberg, Level::Rydberg) | (Level::RydbergP, Level::RydbergP) => {
                    params.u_rr()
                }
                (Level::Rydberg, Level::RydbergP) | (Level::RydbergP, Level::Rydberg) => {
                    params.u_rp
                }
                _ => 0.0,
            };
        }
    }
    single + pairs
}

/// Rydberg Hamiltonian on the atoms tensored with `n_c` cavity levels
/// (`n_c = 1` gives the bare 125-state atomic operator).
pub(crate) fn rydberg_hamiltonian(
    params: &SystemParams,
    n_c: usize,
) -> Result<OperatorMatrix, ModelError> {
    let dim = ATOM_LEVELS.pow(3) * n_c;
    let mut triplets = Vec::new();
    for idx in 0..dim {
        let label = BasisLabel::from_index(idx, n_c);
        let e = rydberg_energy(label.atoms, params);
        triplets.push((idx, idx, C64::new(e, 0.0)));
        for site in 0..3 {
            let partner = match label.atoms[site] {
                Level::Zero => Level::Rydberg,
                Level::Rydberg => Level::Zero,
                Level::One => Level::RydbergP,
                Level::RydbergP => Level::One,
                Level::Excited => continue,
            };
            let mut other = label;
            other.atoms[site] = partner;
            triplets.push((other.index(n_c), idx, C64::new(params.omega_r, 0.0)));
        }
    }
    Ok(OperatorMatrix::from_triplets(dim, triplets)?)
}

/// `H_I^R` on the full space.
pub fn build_h_r(params: &SystemParams) -> Result<OperatorMatrix, ModelError> {
    params.validate()?;
    rydberg_hamiltonian(params, params.n_c)
}

/// Names of the collapse operators in [`build_collapse_ops`] order.
pub fn collapse_labels() -> Vec<String> {
    const CHANNELS: [&str; 6] = ["r->0", "r->1", "p->0", "p->1", "e->0", "e->1"];
    let mut names: Vec<String> = (1..=3)
        .flat_map(|i| CHANNELS.iter().map(move |c| format!("atom{i}:{c}")))
        .collect();
    names.push("cavity".to_string());
    names
}

/// The 19 collapse operators: six per atom (`r→0, r→1, p→0, p→1, e→0,
/// e→1`), atom-major, then `√κ a`.
pub fn build_collapse_ops(params: &SystemParams) -> Result<Vec<OperatorMatrix>, ModelError> {
    params.validate()?;
    let n_c = params.n_c;
    let ryd = (params.gamma / 2.0).sqrt();
    let exc = (params.gamma_e / 2.0).sqrt();
    let channels = [
        (Level::Zero, Level::Rydberg, ryd),
        (Level::One, Level::Rydberg, ryd),
        (Level::Zero, Level::RydbergP, ryd),
        (Level::One, Level::RydbergP, ryd),
        (Level::Zero, Level::Excited, exc),
        (Level::One, Level::Excited, exc),
    ];
    let mut ops = Vec::with_capacity(19);
    for site in 1..=3 {
        for &(to, from, amp) in &channels {
            let local = to.dyad(from).scale(C64::new(amp, 0.0));
            ops.push(atom_op(&local, site, n_c)?);
        }
    }
    let cavity = embed(&annihilation(n_c), 4, n_c)?.scale(C64::new(params.kappa.sqrt(), 0.0));
    ops.push(cavity);
    Ok(ops)
}

pub fn build_full_model(params: &SystemParams) -> Result<LindbladModel, ModelError> {
    let h = build_h_z(params)?.add(&build_h_r(params)?)?;
    let collapse = build_collapse_ops(params)?;
    LindbladModel::new(StateSpace::Full { n_c: params.n_c }, h, collapse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{basis_vector, ONE};
    use Level::*;

    fn idx(s: &str, n_c: usize) -> usize {
        s.parse::<BasisLabel>().unwrap().index(n_c)
    }

    #[test]
    fn basis_size_and_order() {
        let p = SystemParams::default();
        let basis = build_basis(&p);
        assert_eq!(basis.len(), 250);
        assert_eq!(basis[0], BasisLabel::new([Zero; 3], 0));
        assert!(basis.windows(2).all(|w| w[0] < w[1]));
        // (1,0,0; 0) sits after the 25·n_c states with atom1 = 0.
        let pos = basis
            .iter()
            .position(|l| *l == BasisLabel::new([One, Zero, Zero], 0))
            .unwrap();
        assert_eq!(pos, 25 * 2);
    }

    #[test]
    fn zeno_hamiltonian_elements() {
        let p = SystemParams {
            omega: 0.03,
            g: 1.0,
            ..Default::default()
        };
        let h = build_h_z(&p).unwrap();
        assert!((h.get(idx("e00,0", 2), idx("100,0", 2)).re - 0.03).abs() < 1e-15);
        assert!((h.get(idx("e00,0", 2), idx("000,1", 2)).re - 1.0).abs() < 1e-15);
        assert!(h.is_hermitian(1e-15));
    }

    #[test]
    fn rydberg_diagonal_at_antiblockade() {
        let p = SystemParams {
            delta: 30.0,
            u_rp: 7.0,
            ..Default::default()
        };
        let h = build_h_r(&p).unwrap();
        let d = |s: &str| h.get(idx(s, 2), idx(s, 2)).re;
        for s in ["rrr,0", "pp0,0", "p0p,0", "0pp,0", "pp1,0", "p1p,0", "1pp,0"] {
            assert_eq!(d(s), 0.0, "{s}");
        }
        assert_eq!(d("rp0,0"), -3.0 * 30.0 + 7.0);
        assert_eq!(d("r00,1"), -60.0);
        assert!(h.is_hermitian(0.0));
    }

    #[test]
    fn rydberg_drive_couplings() {
        let p = SystemParams {
            omega_r: 0.7,
            ..Default::default()
        };
        let h = build_h_r(&p).unwrap();
        assert_eq!(h.get(idx("r00,0", 2), idx("000,0", 2)).re, 0.7);
        assert_eq!(h.get(idx("1p1,1", 2), idx("111,1", 2)).re, 0.7);
        assert_eq!(h.get(idx("e0e,0", 2), idx("e0e,0", 2)).re, 0.0);
        // e carries no Rydberg coupling
        assert_eq!(h.row(idx("eee,0", 2)).0.len(), 0);
    }

    #[test]
    fn collapse_ops_count_and_rates() {
        let p = SystemParams {
            kappa: 0.2,
            ..Default::default()
        };
        let ops = build_collapse_ops(&p).unwrap();
        assert_eq!(ops.len(), 19);
        assert_eq!(collapse_labels().len(), 19);
        // Rate out of |r⟩ on atom 1 summed over its six channels.
        let r = idx("r00,0", 2);
        let total: f64 = ops[..6]
            .iter()
            .map(|l| l.dagger().matmul(l).unwrap().get(r, r).re)
            .sum();
        assert!((total - p.gamma).abs() < 1e-15);
        let out = ops[18].apply(&basis_vector(250, idx("000,1", 2))).unwrap();
        let mut expected = basis_vector(250, idx("000,0", 2));
        expected[idx("000,0", 2)] = ONE * 0.2f64.sqrt();
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn u_rr_tracks_delta_unless_overridden() {
        let mut p = SystemParams::default();
        p.set("delta", 20.0).unwrap();
        assert_eq!(p.u_rr(), 40.0);
        p.set("u_rr", 35.0).unwrap();
        p.set("delta", 10.0).unwrap();
        assert_eq!(p.u_rr(), 35.0);
        assert!(p.set("bogus", 1.0).is_err());
    }

    #[test]
    fn validation_rejects_bad_params() {
        let p = SystemParams {
            n_c: 1,
            ..Default::default()
        };
        assert_eq!(p.validate(), Err(ModelError::Truncation(1)));
        let p = SystemParams {
            kappa: -0.1,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(ModelError::Param { name: "kappa", .. })));
        let p = SystemParams {
            omega: f64::NAN,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn state_space_lookup() {
        let full = StateSpace::Full { n_c: 2 };
        assert_eq!(full.index_of("100"), Some(50));
        assert_eq!(full.index_of("100,1"), Some(51));
        assert_eq!(full.index_of("100,2"), None);
        assert_eq!(full.label(51), "100,1");
        let eff = StateSpace::Effective;
        assert_eq!(eff.dim(), 18);
        assert_eq!(eff.index_of("D1"), Some(8));
        assert_eq!(eff.product_index([One, One, One]), Some(7));
        assert_eq!(eff.product_index([Excited, One, One]), None);
    }
}
