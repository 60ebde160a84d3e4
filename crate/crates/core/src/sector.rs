//! Invariant blocks of a Liouvillian.
//!
//! States are grouped into sectors such that `H` and every `L†L` act
//! within a sector and every `L` maps each sector into at most one sector.
//! The Liouvillian then maps the block `ρ[s, t]` only into blocks
//! `ρ[σ_k(s), σ_k(t)]`, so connected families of sector pairs are
//! invariant subspaces of `vec(ρ)` and can be solved separately.

use std::collections::HashMap;

use crate::model::LindbladModel;
use crate::operator::{OperatorError, OperatorMatrix, C64, ZERO};
use crate::superop::{liouvillian, vec_index, Superoperator};

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `true` when two distinct sets were merged.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.parent[hi] = lo;
        true
    }

    /// Dense labels `0..count` ordered by smallest member.
    fn labels(&mut self) -> (Vec<usize>, usize) {
        let n = self.parent.len();
        let mut id = vec![usize::MAX; n];
        let mut out = vec![0; n];
        let mut count = 0;
        for x in 0..n {
            let r = self.find(x);
            if id[r] == usize::MAX {
                id[r] = count;
                count += 1;
            }
            out[x] = id[r];
        }
        (out, count)
    }
}

/// Partition of the basis into dynamically closed sectors.
#[derive(Clone, Debug)]
pub struct Sectors {
    pub of_state: Vec<usize>,
    pub members: Vec<Vec<usize>>,
    /// `jump_maps[k][s]`: sector reached from `s` by collapse operator `k`.
    pub jump_maps: Vec<Vec<Option<usize>>>,
}

impl Sectors {
    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

pub fn find_sectors(h: &OperatorMatrix, collapse: &[OperatorMatrix]) -> Result<Sectors, OperatorError> {
    let d = h.dim();
    let mut uf = UnionFind::new(d);
    for (r, c, _) in h.iter() {
        uf.union(r, c);
    }
    for l in collapse {
        for (r, c, _) in l.dagger().matmul(l)?.iter() {
            uf.union(r, c);
        }
    }
    loop {
        let mut changed = false;
        for l in collapse {
            let mut target: HashMap<usize, usize> = HashMap::new();
            for (r, c, _) in l.iter() {
                let s = uf.find(c);
                let t = uf.find(r);
                match target.get(&s) {
                    Some(&t0) => changed |= uf.union(t0, t),
                    None => {
                        target.insert(s, t);
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let (of_state, count) = uf.labels();
    let mut members = vec![Vec::new(); count];
    for (i, &s) in of_state.iter().enumerate() {
        members[s].push(i);
    }
    let jump_maps = collapse
        .iter()
        .map(|l| {
            let mut map = vec![None; count];
            for (r, c, _) in l.iter() {
                map[of_state[c]] = Some(of_state[r]);
            }
            map
        })
        .collect();
    Ok(Sectors {
        of_state,
        members,
        jump_maps,
    })
}

/// Invariant blocks of `vec(ρ)`, each a set of sector pairs.
#[derive(Clone, Debug)]
pub struct BlockStructure {
    pub sectors: Sectors,
    pub blocks: Vec<Vec<(usize, usize)>>,
    block_of_pair: Vec<usize>,
}

impl BlockStructure {
    pub fn new(h: &OperatorMatrix, collapse: &[OperatorMatrix]) -> Result<Self, OperatorError> {
        let sectors = find_sectors(h, collapse)?;
        let s = sectors.count();
        let mut uf = UnionFind::new(s * s);
        for map in &sectors.jump_maps {
            for a in 0..s {
                for b in 0..s {
                    if let (Some(ta), Some(tb)) = (map[a], map[b]) {
                        uf.union(a * s + b, ta * s + tb);
                    }
                }
            }
        }
        let (block_of_pair, count) = uf.labels();
        let mut blocks = vec![Vec::new(); count];
        for (p, &b) in block_of_pair.iter().enumerate() {
            blocks[b].push((p / s, p % s));
        }
        Ok(Self {
            sectors,
            blocks,
            block_of_pair,
        })
    }

    pub fn for_model(model: &LindbladModel) -> Result<Self, OperatorError> {
        Self::new(&model.h, &model.collapse)
    }

    pub fn block_of_pair(&self, s: usize, t: usize) -> usize {
        self.block_of_pair[s * self.sectors.count() + t]
    }

    /// Blocks holding populations, in increasing order.
    pub fn diagonal_blocks(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.sectors.count())
            .map(|s| self.block_of_pair(s, s))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Blocks touched by the nonzero entries of a vectorized matrix.
    pub fn support_blocks(&self, vec_rho: &[C64], dim: usize) -> Vec<usize> {
        let mut out: Vec<usize> = vec_rho
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != ZERO)
            .map(|(k, _)| {
                let (i, j) = (k % dim, k / dim);
                self.block_of_pair(self.sectors.of_state[i], self.sectors.of_state[j])
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Sorted `vec(ρ)` positions covered by the given blocks.
    pub fn entries(&self, blocks: &[usize]) -> Vec<usize> {
        let d = self.sectors.of_state.len();
        let mut out = Vec::new();
        for &b in blocks {
            for &(s, t) in &self.blocks[b] {
                for &j in &self.sectors.members[t] {
                    for &i in &self.sectors.members[s] {
                        out.push(vec_index(i, j, d));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// A Liouvillian restricted to an invariant set of `vec(ρ)` positions.
#[derive(Clone, Debug)]
pub struct ReducedLiouvillian {
    pub hilbert_dim: usize,
    /// Full `vec(ρ)` position of each reduced coordinate.
    pub entries: Vec<usize>,
    pub matrix: OperatorMatrix,
}

impl ReducedLiouvillian {
    pub fn restrict(full: &Superoperator, entries: Vec<usize>) -> Result<Self, OperatorError> {
        let mut map = vec![usize::MAX; full.dim()];
        for (k, &e) in entries.iter().enumerate() {
            map[e] = k;
        }
        let triplets = full.matrix().iter().filter_map(|(r, c, v)| {
            let (rr, cc) = (map[r], map[c]);
            (rr != usize::MAX && cc != usize::MAX).then_some((rr, cc, v))
        });
        let matrix = OperatorMatrix::from_triplets(entries.len(), triplets)?;
        Ok(Self {
            hilbert_dim: full.hilbert_dim(),
            entries,
            matrix,
        })
    }

    /// Liouvillian of `model` restricted to the given blocks.
    pub fn for_blocks(
        model: &LindbladModel,
        structure: &BlockStructure,
        blocks: &[usize],
    ) -> Result<Self, OperatorError> {
        let full = liouvillian(&model.h, &model.collapse)?;
        Self::restrict(&full, structure.entries(blocks))
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn gather(&self, full: &[C64]) -> Vec<C64> {
        self.entries.iter().map(|&e| full[e]).collect()
    }

    pub fn scatter(&self, reduced: &[C64]) -> Vec<C64> {
        let d = self.hilbert_dim;
        let mut out = vec![ZERO; d * d];
        for (&e, &v) in self.entries.iter().zip(reduced) {
            out[e] = v;
        }
        out
    }

    /// Reduced coordinates of the populations `ρ[i, i]`.
    pub fn population_coords(&self) -> Vec<usize> {
        let d = self.hilbert_dim;
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, &e)| e % d == e / d)
            .map(|(k, _)| k)
            .collect()
    }
}

/// Restriction of a block Liouvillian to vectors that are constant on the
/// orbits of a group of basis permutations.
///
/// With orbit sums `b_O` as basis, a permutation-invariant generator maps
/// `b_O` to `Σ_O' M[O', O] b_O'` where `M[O', O]` is the sum of the block
/// entries in the row of any member of `O'` over the columns in `O`.
#[derive(Clone, Debug)]
pub struct SymmetricReduction {
    /// Orbit of each block coordinate.
    pub orbit_of: Vec<usize>,
    pub orbit_sizes: Vec<usize>,
    /// First (smallest) block coordinate of each orbit.
    pub representatives: Vec<usize>,
    pub matrix: OperatorMatrix,
}

impl SymmetricReduction {
    /// Returns `None` unless the block and its generator are invariant
    /// under every generator.
    pub fn new(block: &ReducedLiouvillian, generators: &[Vec<usize>]) -> Option<Self> {
        if generators.is_empty() {
            return None;
        }
        let d = block.hilbert_dim;
        let n = block.dim();
        let mut coord = vec![usize::MAX; d * d];
        for (k, &e) in block.entries.iter().enumerate() {
            coord[e] = k;
        }
        let mut uf = UnionFind::new(n);
        let mut images = Vec::with_capacity(generators.len());
        for g in generators {
            if g.len() != d {
                return None;
            }
            let image: Vec<usize> = block
                .entries
                .iter()
                .map(|&e| coord[vec_index(g[e % d], g[e / d], d)])
                .collect();
            if image.contains(&usize::MAX) {
                return None;
            }
            for (k, &m) in image.iter().enumerate() {
                uf.union(k, m);
            }
            images.push(image);
        }
        let tol = 1e-12 * block.matrix.max_abs().max(1.0);
        for image in &images {
            for (r, c, v) in block.matrix.iter() {
                if (block.matrix.get(image[r], image[c]) - v).norm() > tol {
                    return None;
                }
            }
        }
        let (orbit_of, count) = uf.labels();
        let mut representatives = vec![usize::MAX; count];
        let mut orbit_sizes = vec![0; count];
        for (k, &o) in orbit_of.iter().enumerate() {
            if representatives[o] == usize::MAX {
                representatives[o] = k;
            }
            orbit_sizes[o] += 1;
        }
        let triplets = block
            .matrix
            .iter()
            .filter(|&(r, _, _)| representatives[orbit_of[r]] == r)
            .map(|(r, c, v)| (orbit_of[r], orbit_of[c], v));
        let matrix = OperatorMatrix::from_triplets(count, triplets).ok()?;
        Some(Self {
            orbit_of,
            orbit_sizes,
            representatives,
            matrix,
        })
    }

    pub fn dim(&self) -> usize {
        self.orbit_sizes.len()
    }

    /// Block coordinates of `Σ_O x_O b_O`.
    pub fn expand(&self, x: &[C64]) -> Vec<C64> {
        self.orbit_of.iter().map(|&o| x[o]).collect()
    }

    /// Orbit coordinates of `y`, if `y` is constant on every orbit.
    pub fn compress(&self, y: &[C64]) -> Option<Vec<C64>> {
        let x: Vec<C64> = self.representatives.iter().map(|&k| y[k]).collect();
        y.iter()
            .zip(&self.orbit_of)
            .all(|(v, &o)| *v == x[o])
            .then_some(x)
    }
}

/// One character sector of a cyclic symmetry `g` of a block, in the
/// orthonormal basis `b_O = Σ_j ω^{-mj} e_{g^j x_O} / √|O|`, where
/// `ω = e^{2πi/p}` and `p` is the order of `g`. Orbits whose length `ℓ`
/// has `mℓ ≢ 0 (mod p)` carry no vector of character `m`.
#[derive(Clone, Debug)]
pub struct CyclicSector {
    pub character: usize,
    pub order: usize,
    /// Block coordinates `x_O, g x_O, g² x_O, …` of each orbit in the sector.
    pub orbits: Vec<Vec<usize>>,
    pub matrix: OperatorMatrix,
}

impl CyclicSector {
    /// Splits `block` into the `p` character sectors of `generator`, or
    /// returns `None` when the generator is not a symmetry of the block.
    pub fn split(block: &ReducedLiouvillian, generator: &[usize]) -> Option<Vec<Self>> {
        let d = block.hilbert_dim;
        let n = block.dim();
        if generator.len() != d {
            return None;
        }
        let mut coord = vec![usize::MAX; d * d];
        for (k, &e) in block.entries.iter().enumerate() {
            coord[e] = k;
        }
        let image: Vec<usize> = block
            .entries
            .iter()
            .map(|&e| coord[vec_index(generator[e % d], generator[e / d], d)])
            .collect();
        if image.contains(&usize::MAX) {
            return None;
        }
        let tol = 1e-12 * block.matrix.max_abs().max(1.0);
        for (r, c, v) in block.matrix.iter() {
            if (block.matrix.get(image[r], image[c]) - v).norm() > tol {
                return None;
            }
        }

        let mut orbit_of = vec![usize::MAX; n];
        let mut position = vec![0; n];
        let mut orbits: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if orbit_of[start] != usize::MAX {
                continue;
            }
            let mut orbit = Vec::new();
            let mut k = start;
            while orbit_of[k] == usize::MAX {
                orbit_of[k] = orbits.len();
                position[k] = orbit.len();
                orbit.push(k);
                k = image[k];
            }
            orbits.push(orbit);
        }
        let sizes: Vec<usize> = orbits.iter().map(Vec::len).collect();
        let gcd = |mut a: usize, mut b: usize| {
            while b != 0 {
                (a, b) = (b, a % b);
            }
            a
        };
        let order = sizes.iter().fold(1, |acc, &l| acc / gcd(acc, l) * l);

        let sectors = (0..order)
            .map(|m| {
                let mut index = vec![usize::MAX; sizes.len()];
                let mut members = Vec::new();
                for (o, &l) in sizes.iter().enumerate() {
                    if (m * l) % order == 0 {
                        index[o] = members.len();
                        members.push(orbits[o].clone());
                    }
                }
                let triplets = block.matrix.iter().filter_map(|(r, c, v)| {
                    let (or, oc) = (orbit_of[r], orbit_of[c]);
                    if position[r] != 0 || index[or] == usize::MAX || index[oc] == usize::MAX {
                        return None;
                    }
                    let angle = -2.0 * std::f64::consts::PI * (m * position[c]) as f64 / order as f64;
                    let scale = (sizes[oc] as f64 / sizes[or] as f64).sqrt();
                    Some((index[or], index[oc], v * C64::from_polar(scale, angle)))
                });
                let matrix = OperatorMatrix::from_triplets(members.len(), triplets).ok()?;
                Some(Self {
                    character: m,
                    order,
                    orbits: members,
                    matrix,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(sectors)
    }

    pub fn dim(&self) -> usize {
        self.orbits.len()
    }

    /// Coordinates of the orthogonal projection of `y` onto the sector.
    pub fn project(&self, y: &[C64]) -> Vec<C64> {
        self.orbits
            .iter()
            .map(|orbit| {
                let norm = (orbit.len() as f64).sqrt();
                orbit
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| {
                        let angle = 2.0 * std::f64::consts::PI * (self.character * j) as f64 / self.order as f64;
                        y[k] * C64::from_polar(1.0 / norm, angle)
                    })
                    .sum()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_full_model, SystemParams};
    use crate::operator::ONE;

    #[test]
    fn full_model_sectors_follow_excitation_number() {
        let model = build_full_model(&SystemParams::default()).unwrap();
        let structure = BlockStructure::for_model(&model).unwrap();
        assert_eq!(structure.sectors.sizes(), vec![8, 44, 90, 81, 27]);
        let diag = structure.diagonal_blocks();
        assert_eq!(diag.len(), 1);
        assert_eq!(structure.entries(&diag).len(), 64 + 44 * 44 + 90 * 90 + 81 * 81 + 27 * 27);
    }

    #[test]
    fn exchange_symmetric_reduction_is_exact() {
        let model = build_full_model(&SystemParams::default()).unwrap();
        let structure = BlockStructure::for_model(&model).unwrap();
        let diag = structure.diagonal_blocks();
        let block = ReducedLiouvillian::for_blocks(&model, &structure, &diag).unwrap();
        let sym = SymmetricReduction::new(&block, &model.space.exchange_generators()).unwrap();
        assert!(sym.dim() * 5 < block.dim());
        let x: Vec<C64> = (0..sym.dim())
            .map(|k| C64::new((k % 11) as f64 - 5.0, (k % 3) as f64))
            .collect();
        let lhs = sym.expand(&sym.matrix.apply(&x).unwrap());
        let rhs = block.matrix.apply(&sym.expand(&x)).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(sym.compress(&lhs).unwrap().len(), sym.dim());
    }

    #[test]
    fn cyclic_sectors_partition_the_block() {
        let model = build_full_model(&SystemParams::default()).unwrap();
        let structure = BlockStructure::for_model(&model).unwrap();
        let diag = structure.diagonal_blocks();
        let block = ReducedLiouvillian::for_blocks(&model, &structure, &diag).unwrap();
        let cycle = &model.space.exchange_generators()[1];
        let sectors = CyclicSector::split(&block, cycle).unwrap();
        assert_eq!(sectors.len(), 3);
        assert_eq!(sectors.iter().map(CyclicSector::dim).sum::<usize>(), block.dim());
        // the character-0 sector contains the exchange-symmetric subspace
        let sym = SymmetricReduction::new(&block, &model.space.exchange_generators()).unwrap();
        assert!(sectors[0].dim() > sym.dim());
        assert_eq!(sectors[1].dim(), sectors[2].dim());
    }

    #[test]
    fn cyclic_sector_matrix_is_the_restricted_action() {
        // a two-cycle of a 4-level system
        let h = OperatorMatrix::from_triplets(
            4,
            [(0, 1, ONE), (1, 0, ONE), (2, 3, ONE), (3, 2, ONE), (0, 2, ONE * 0.5), (2, 0, ONE * 0.5), (1, 3, ONE * 0.5), (3, 1, ONE * 0.5)],
        )
        .unwrap();
        let l = OperatorMatrix::from_triplets(4, [(0, 1, ONE * 0.3), (2, 3, ONE * 0.3)]).unwrap();
        let l2 = OperatorMatrix::from_triplets(4, [(0, 3, ONE * 0.2), (2, 1, ONE * 0.2)]).unwrap();
        let full = liouvillian(&h, &[l.clone(), l2.clone()]).unwrap();
        let block = ReducedLiouvillian::restrict(&full, (0..16).collect()).unwrap();
        let swap = vec![2, 3, 0, 1];
        let sectors = CyclicSector::split(&block, &swap).unwrap();
        assert_eq!(sectors.len(), 2);
        for sector in &sectors {
            let sign = if sector.character == 0 { 1.0 } else { -1.0 };
            for (o, orbit) in sector.orbits.iter().enumerate() {
                let mut b = vec![ZERO; 16];
                b[orbit[0]] = C64::new(1.0 / (orbit.len() as f64).sqrt(), 0.0);
                if orbit.len() == 2 {
                    b[orbit[1]] = C64::new(sign / 2f64.sqrt(), 0.0);
                }
                let d = 4;
                assert_eq!(orbit.get(1).copied().unwrap_or(orbit[0]), vec_index(swap[orbit[0] % d], swap[orbit[0] / d], d));
                let lb = full.apply(&b).unwrap();
                let coeffs = sector.project(&lb);
                for (o2, c) in coeffs.iter().enumerate() {
                    assert!((c - sector.matrix.get(o2, o)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn asymmetric_generator_is_rejected() {
        let p = SystemParams { n_c: 2, ..SystemParams::default() };
        let model = build_full_model(&p).unwrap();
        let structure = BlockStructure::for_model(&model).unwrap();
        let diag = structure.diagonal_blocks();
        let block = ReducedLiouvillian::for_blocks(&model, &structure, &diag).unwrap();
        // Cavity-only relabelling is not a symmetry.
        let d = model.dim();
        let swap_photon: Vec<usize> = (0..d).map(|i| i ^ 1).collect();
        assert!(SymmetricReduction::new(&block, &[swap_photon]).is_none());
    }

    #[test]
    fn dense_coupling_gives_single_block() {
        let h = OperatorMatrix::from_triplets(3, [(0, 1, ONE), (1, 0, ONE), (1, 2, ONE), (2, 1, ONE)]).unwrap();
        let structure = BlockStructure::new(&h, &[]).unwrap();
        assert_eq!(structure.sectors.count(), 1);
        assert_eq!(structure.blocks.len(), 1);
    }

    #[test]
    fn reduced_liouvillian_matches_full_action() {
        let model = build_full_model(&SystemParams::default()).unwrap();
        let structure = BlockStructure::for_model(&model).unwrap();
        let full = liouvillian(&model.h, &model.collapse).unwrap();
        let diag = structure.diagonal_blocks();
        let reduced = ReducedLiouvillian::restrict(&full, structure.entries(&diag)).unwrap();
        let x: Vec<C64> = (0..reduced.dim())
            .map(|k| C64::new((k % 7) as f64 - 3.0, (k % 5) as f64))
            .collect();
        let via_full = reduced.gather(&full.apply(&reduced.scatter(&x)).unwrap());
        let via_reduced = reduced.matrix.apply(&x).unwrap();
        let full_out = full.apply(&reduced.scatter(&x)).unwrap();
        let leak: f64 = full_out
            .iter()
            .enumerate()
            .filter(|(k, _)| reduced.entries.binary_search(k).is_err())
            .map(|(_, v)| v.norm())
            .fold(0.0, f64::max);
        assert_eq!(leak, 0.0);
        for (a, b) in via_full.iter().zip(&via_reduced) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
