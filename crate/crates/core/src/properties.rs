use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Axis, Experiment, ExperimentConfig, Scale};
use crate::model::{
    build_full_model, build_h_z, build_zeno_coupling, LindbladModel, StateSpace, SystemParams,
};
use crate::observables::{fidelity, TargetState};
use crate::operator::{annihilation, embed, Level, OperatorMatrix, C64};
use crate::solvers::{evolve_with, steady_state, EvolveOptions, SteadyMethod, SteadyOptions};
use crate::state::DensityMatrix;
use crate::superop::{liouvillian, vec_index, vec_trace};

const ZERO: C64 = C64::new(0.0, 0.0);

fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_op(rng: &mut ChaCha8Rng, dim: usize) -> OperatorMatrix {
    let triplets: Vec<_> = (0..dim)
        .flat_map(|r| (0..dim).map(move |c| (r, c)))
        .map(|(r, c)| (r, c, random_c64(rng)))
        .collect();
    OperatorMatrix::from_triplets(dim, triplets).unwrap()
}

fn random_hermitian(rng: &mut ChaCha8Rng, dim: usize) -> OperatorMatrix {
    let a = random_op(rng, dim);
    a.add(&a.dagger()).unwrap().scale(C64::new(0.5, 0.0))
}

fn random_state(rng: &mut ChaCha8Rng, dim: usize) -> DensityMatrix {
    let g = random_op(rng, dim);
    let rho = g.matmul(&g.dagger()).unwrap();
    let mut data = vec![ZERO; dim * dim];
    for (r, c, v) in rho.iter() {
        data[vec_index(r, c, dim)] = v;
    }
    let mut rho = DensityMatrix::from_vec(dim, data).unwrap();
    rho.normalize();
    rho
}

fn custom_model(h: OperatorMatrix, collapse: Vec<OperatorMatrix>) -> LindbladModel {
    let labels = (0..h.dim()).map(|i| format!("s{i}")).collect();
    LindbladModel::new(StateSpace::Custom { labels }, h, collapse).unwrap()
}

fn diff(a: &OperatorMatrix, b: &OperatorMatrix) -> f64 {
    a.max_abs_diff(b).unwrap()
}

/// Column-major dense Liouvillian from the textbook superoperator formula.
fn dense_liouvillian(h: &OperatorMatrix, collapse: &[OperatorMatrix]) -> Vec<C64> {
    let d = h.dim();
    let n = d * d;
    let mut out = vec![ZERO; n * n];
    let i = C64::new(0.0, 1.0);
    let mut add = |row: usize, col: usize, v: C64| out[row + col * n] += v;
    for a in 0..d {
        for b in 0..d {
            for k in 0..d {
                // -i (H ρ − ρ H)
                add(vec_index(a, b, d), vec_index(k, b, d), -i * h.get(a, k));
                add(vec_index(a, b, d), vec_index(a, k, d), i * h.get(k, b));
            }
        }
    }
    for l in collapse {
        let ldl = l.dagger().matmul(l).unwrap();
        for a in 0..d {
            for b in 0..d {
                for k in 0..d {
                    for m in 0..d {
                        add(vec_index(a, b, d), vec_index(k, m, d), l.get(a, k) * l.get(b, m).conj());
                    }
                    add(vec_index(a, b, d), vec_index(k, b, d), -0.5 * ldl.get(a, k));
                    add(vec_index(a, b, d), vec_index(a, k, d), -0.5 * ldl.get(k, b));
                }
            }
        }
    }
    out
}

/// `N = Σ|e⟩⟨e| + a†a` or `Q = Σ(|1⟩⟨1| + |e⟩⟨e| + |p⟩⟨p|) + a†a`.
fn counting_operator(n_c: usize, levels: &[Level]) -> OperatorMatrix {
    let a = annihilation(n_c);
    let mut total = embed(&a.dagger().matmul(&a).unwrap(), 4, n_c).unwrap();
    for site in 1..=3 {
        for &level in levels {
            total = total.add(&embed(&level.dyad(level), site, n_c).unwrap()).unwrap();
        }
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kron_is_associative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (random_op(&mut rng, 2), random_op(&mut rng, 3), random_op(&mut rng, 2));
        let left = a.kron(&b).unwrap().kron(&c).unwrap();
        let right = a.kron(&b.kron(&c).unwrap()).unwrap();
        prop_assert!(diff(&left, &right) < 1e-12);
    }

    #[test]
    fn dagger_reverses_products(seed in any::<u64>(), dim in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_op(&mut rng, dim), random_op(&mut rng, dim));
        let lhs = a.matmul(&b).unwrap().dagger();
        let rhs = b.dagger().matmul(&a.dagger()).unwrap();
        prop_assert!(diff(&lhs, &rhs) < 1e-12);
        prop_assert!(diff(&a.dagger().dagger(), &a) == 0.0);
    }

    #[test]
    fn operators_on_different_sites_commute(seed in any::<u64>(), s1 in 1usize..=4, s2 in 1usize..=4) {
        prop_assume!(s1 != s2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_c = 2;
        let local = |s: usize| if s == 4 { n_c } else { 5 };
        let a = embed(&random_op(&mut rng, local(s1)), s1, n_c).unwrap();
        let b = embed(&random_op(&mut rng, local(s2)), s2, n_c).unwrap();
        prop_assert!(a.commutator(&b).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn liouvillian_matches_dense_formula(seed in any::<u64>(), dim in 2usize..5, n_ops in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(&mut rng, dim);
        let collapse: Vec<_> = (0..n_ops).map(|_| random_op(&mut rng, dim)).collect();
        let sparse = liouvillian(&h, &collapse).unwrap();
        let dense = dense_liouvillian(&h, &collapse);
        let n = dim * dim;
        for r in 0..n {
            for c in 0..n {
                prop_assert!((sparse.matrix().get(r, c) - dense[r + c * n]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn liouvillian_preserves_trace_and_hermiticity(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(&mut rng, dim);
        let collapse = vec![random_op(&mut rng, dim), random_op(&mut rng, dim)];
        let l = liouvillian(&h, &collapse).unwrap();
        let rho = random_state(&mut rng, dim);
        let out = l.apply(rho.as_slice()).unwrap();
        prop_assert!(vec_trace(&out, dim).norm() < 1e-12);
        let out = DensityMatrix::from_vec(dim, out).unwrap();
        prop_assert!(out.hermiticity_error() < 1e-12);
    }

    #[test]
    fn zeno_coupling_conserves_excitations(g in 0.1f64..3.0, omega in 0.0f64..1.0) {
        let params = SystemParams { g, omega, ..SystemParams::default() };
        let n = counting_operator(params.n_c, &[Level::Excited]);
        let q = counting_operator(params.n_c, &[Level::One, Level::Excited, Level::RydbergP]);
        let h2 = build_zeno_coupling(&params).unwrap();
        prop_assert!(h2.commutator(&n).unwrap().max_abs() < 1e-12);
        let hz = build_h_z(&params).unwrap();
        prop_assert!(hz.commutator(&q).unwrap().max_abs() < 1e-12);
        // the classical drive raises N, so only Q survives
        if omega > 1e-3 {
            prop_assert!(hz.commutator(&n).unwrap().max_abs() > 1e-4);
        }
    }

    #[test]
    fn w_admixture_raises_fidelity(seed in any::<u64>(), p1 in 0.0f64..1.0, p2 in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let space = StateSpace::Effective;
        let w = TargetState::w(&space).unwrap();
        let w_rho = DensityMatrix::pure(&w.vector).unwrap();
        let sigma = random_state(&mut rng, 18);
        let mix = |p: f64| {
            let data = sigma.as_slice().iter().zip(w_rho.as_slice()).map(|(s, t)| s * (1.0 - p) + t * p).collect();
            DensityMatrix::from_vec(18, data).unwrap()
        };
        let (lo, hi) = (p1.min(p2), p1.max(p2));
        let (f_lo, f_hi) = (fidelity(&mix(lo), &w).unwrap(), fidelity(&mix(hi), &w).unwrap());
        prop_assert!(f_lo <= f_hi + 1e-12);
        prop_assert!((0.0..=1.0 + 1e-10).contains(&f_hi));
    }

    #[test]
    fn purity_and_population_bounds(seed in any::<u64>(), dim in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = random_state(&mut rng, dim);
        let p = rho.purity();
        prop_assert!(p >= 1.0 / dim as f64 - 1e-12 && p <= 1.0 + 1e-12);
        let total: f64 = (0..dim).map(|i| rho.get(i, i).re).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!((0..dim).all(|i| rho.get(i, i).re >= -1e-12));
    }

    #[test]
    fn nullspace_and_longtime_agree(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = random_hermitian(&mut rng, 3);
        let collapse = vec![random_op(&mut rng, 3), random_op(&mut rng, 3)];
        let model = custom_model(h, collapse);
        let a = steady_state(&model, &SteadyOptions::default()).unwrap();
        let b = steady_state(&model, &SteadyOptions::with_method(SteadyMethod::Longtime)).unwrap();
        prop_assert!(a.residual < 1e-8);
        prop_assert!(a.rho_ss.trace_distance(&b.rho_ss).unwrap() < 1e-6);
    }

    #[test]
    fn config_round_trips(
        delta in 1.0f64..100.0,
        kappa in 0.0f64..1.0,
        start in 0.01f64..1.0,
        span in 0.1f64..10.0,
        points in 2usize..50,
        log in any::<bool>(),
        include in proptest::collection::vec(0.01f64..10.0, 0..3),
        tol in 1e-12f64..1e-4,
    ) {
        let mut config = ExperimentConfig::default_for(Experiment::Custom);
        config.params.insert("delta".into(), delta);
        config.params.insert("kappa".into(), kappa);
        let mut axis = Axis::new("omega", start, start + span, points, if log { Scale::Log } else { Scale::Linear });
        axis.include = include;
        config.grid = vec![axis];
        config.solver.tol = tol;
        let text = config.to_toml();
        prop_assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), config);
    }
}

#[test]
fn evolution_without_dynamics_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = custom_model(OperatorMatrix::zeros(4), Vec::new());
    let rho0 = random_state(&mut rng, 4);
    let run = evolve_with(
        &model,
        &rho0,
        &EvolveOptions {
            t_end: 10.0,
            n_record: 3,
            tol: 1e-10,
            record_states: true,
        },
    )
    .unwrap();
    for rho in run.states.unwrap() {
        assert!(rho.trace_distance(&rho0).unwrap() < 1e-14);
    }
}

#[test]
fn full_model_is_exchange_symmetric() {
    let model = build_full_model(&SystemParams::default()).unwrap();
    for g in model.space.exchange_generators() {
        let d = model.dim();
        let p = OperatorMatrix::from_triplets(d, (0..d).map(|i| (g[i], i, C64::new(1.0, 0.0)))).unwrap();
        let conj = |op: &OperatorMatrix| p.matmul(op).unwrap().matmul(&p.dagger()).unwrap();
        assert!(diff(&conj(&model.h), &model.h) < 1e-12);
        for l in &model.collapse {
            let image = conj(l);
            assert!(model.collapse.iter().any(|m| diff(&image, m) < 1e-12));
        }
    }
}
