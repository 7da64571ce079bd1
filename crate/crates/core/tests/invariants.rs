mod common;

use common::*;
use mfhmc::coupling::{CoupledKernel, CoupledPhase, CouplingParams};
use mfhmc::experiments::{contraction_theorem_check, marginal_check, ConfinementConfig, Execution, MarginalCheckConfig, ModelConfig, TheoremCheckConfig};
use mfhmc::integrator::{IntegratorConfig, PhasePoint};
use mfhmc::model::{ConfinementSpec, InteractionSign, InteractionSpec, MeanFieldModel, PositionState};
use mfhmc::sampler::{run_chain, ParticleNoise, RngSpec};
use mfhmc::theory::{ell1_distance, f_eval, rho_distance, RegularityParams};
use proptest::prelude::*;

fn sign(b: bool) -> InteractionSign {
    if b {
        InteractionSign::Attractive
    } else {
        InteractionSign::Repulsive
    }
}

fn confinement(kind: u8, d: usize, k: f64) -> ConfinementSpec<f64> {
    match kind % 3 {
        0 => ConfinementSpec::Quadratic { stiffness: k },
        1 => ConfinementSpec::GaussianMixture {
            means: vec![vec![1.0; d], vec![-0.5; d], (0..d).map(|c| c as f64).collect()],
        },
        _ => ConfinementSpec::Rosenbrock { a: 1.0, b: 5.0 },
    }
}

prop_compose! {
    fn model_and_point()(kind in 0u8..3, n in 1usize..6, d1 in 1usize..4, k in 0.2f64..3.0,
                         eps in -1.0f64..1.0, attract in any::<bool>(), seed in any::<u64>())
        -> (MeanFieldModel<f64>, PositionState<f64>) {
        let d = if kind % 3 == 2 { 2 } else { d1 };
        let model = MeanFieldModel::new(confinement(kind, d, k), InteractionSpec::Quadratic { sign: sign(attract) }, eps, n, d).unwrap();
        let mut rng = RngSpec::new(seed, 0).aux_rng(0);
        let x = mfhmc::sampler::uniform_position(&mut rng, n, d, &vec![-2.0; d], &vec![2.0; d]);
        (model, x)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradient_matches_finite_differences((model, x) in model_and_point()) {
        let err = gradient_fd_error(&model, &x);
        prop_assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn interaction_forces_cancel((model, x) in model_and_point()) {
        let free = MeanFieldModel::product(model.confinement().clone(), model.n(), model.d()).unwrap();
        let total = model.grad_full(&x).unwrap();
        let conf = free.grad_full(&x).unwrap();
        let scale = total.as_slice().iter().fold(1.0f64, |m, g| m.max(g.abs())) * model.n() as f64;
        for c in 0..model.d() {
            let net: f64 = (0..model.n()).map(|i| total.particle(i)[c] - conf.particle(i)[c]).sum();
            prop_assert!(net.abs() < 1e-12 * scale, "net interaction force {net}");
        }
    }

    #[test]
    fn interaction_energy_is_translation_invariant((model, x) in model_and_point(), shift in -5.0f64..5.0) {
        let moved = PositionState::new(x.n(), x.d(), x.as_slice().iter().map(|v| v + shift).collect()).unwrap();
        let (_, w0) = model.energy_parts(&x).unwrap();
        let (_, w1) = model.energy_parts(&moved).unwrap();
        prop_assert!((w0 - w1).abs() <= 1e-10 * (1.0 + w0.abs()), "{w0} vs {w1}");
    }

    #[test]
    fn zero_epsilon_gradient_is_product((model, x) in model_and_point()) {
        let decoupled = MeanFieldModel::new(model.confinement().clone(), model.interaction(), 0.0, model.n(), model.d()).unwrap();
        let g = decoupled.grad_full(&x).unwrap();
        for i in 0..model.n() {
            let mut own = vec![0.0; model.d()];
            model.confinement().gradient_into(x.particle(i), &mut own);
            prop_assert_eq!(g.particle(i), &own[..]);
        }
    }

    #[test]
    fn verlet_is_reversible((model, x) in model_and_point(), extra in 0usize..30, t in 0.05f64..1.0, seed in any::<u64>()) {
        let mut rng = RngSpec::new(seed, 1).aux_rng(0);
        let p = mfhmc::sampler::gaussian_position(&mut rng, x.n(), x.d(), 0.0, 1.0);
        let start = PhasePoint::new(x, p).unwrap();
        let err = reversibility_error(&model, &start, &IntegratorConfig::new(t, stable_steps(t) + extra).unwrap());
        prop_assert!(err <= 1e-12, "reversibility error {err}");
    }

    #[test]
    fn a_priori_bounds_hold(u in prop::array::uniform8(0.0f64..1.0), n in 1usize..6, d in 1usize..4, seed in any::<u64>()) {
        let mut rng = RngSpec::new(seed, 2).aux_rng(0);
        let x = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, 3.0).into_vec();
        let v = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, 1.0).into_vec();
        let inst = apriori_instance(&u, n, d, x, v);
        let bad = apriori_bounds_violation(&inst.model, &inst.start, &inst.cfg, inst.l, inst.l_tilde);
        prop_assert!(bad.is_none(), "{:?}", bad);
    }

    #[test]
    fn zero_epsilon_chain_factorizes(kind in 0u8..3, n in 1usize..5, seed in any::<u64>()) {
        let d = 2;
        let mut rng = RngSpec::new(seed, 3).aux_rng(0);
        let x0 = mfhmc::sampler::gaussian_position(&mut rng, n, d, 0.0, 1.0);
        let bad = factorization_mismatch(confinement(kind, d, 1.0), n, d, seed, &x0);
        prop_assert!(bad.is_none(), "{:?}", bad);
    }

    #[test]
    fn chain_is_exchangeable(n in 2usize..6, seed in any::<u64>(), rot in 1usize..5) {
        let d = 2;
        let model = MeanFieldModel::new(ConfinementSpec::Quadratic { stiffness: 1.0 }, InteractionSpec::Quadratic { sign: InteractionSign::Attractive }, 0.3, n, d).unwrap();
        let mut rng = RngSpec::new(seed, 4).aux_rng(0);
        let x0 = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, 1.0);
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = PositionState::from_particles(&perm.iter().map(|&j| x0.particle(j).to_vec()).collect::<Vec<_>>()).unwrap();
        let spec = RngSpec::new(seed, 0);
        let cfg = IntegratorConfig::new(0.7, 5).unwrap();
        let a = run_chain(&model, &x0, 10, &cfg, &mut spec.particle_noise(n), 10).unwrap();
        let mut noise = ParticleNoise::from_streams(perm.iter().map(|&j| spec.particle_rng(j)).collect());
        let b = run_chain(&model, &permuted, 10, &cfg, &mut noise, 10).unwrap();
        let (fa, fb) = (a.states.last().unwrap(), b.states.last().unwrap());
        for (i, &j) in perm.iter().enumerate() {
            for c in 0..d {
                prop_assert!((fb.particle(i)[c] - fa.particle(j)[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epsilon_coupling_factorizes(n in 1usize..5, seed in any::<u64>(), r_tilde in 0.0f64..3.0) {
        let d = 2;
        let conf = ConfinementSpec::Quadratic { stiffness: 1.0 };
        let joint = MeanFieldModel::new(conf.clone(), InteractionSpec::Quadratic { sign: InteractionSign::Repulsive }, 0.0, n, d).unwrap();
        let single = MeanFieldModel::product(conf, 1, d).unwrap();
        let mut rng = RngSpec::new(seed, 5).aux_rng(0);
        let x0 = mfhmc::sampler::gaussian_position(&mut rng, n, d, 0.0, 1.0);
        let y0 = mfhmc::sampler::gaussian_position(&mut rng, n, d, 0.0, 1.0);
        let cfg = IntegratorConfig::new(1.0, 6).unwrap();
        let params = CouplingParams::new(0.5, r_tilde, 1e-9, 1).unwrap();
        let spec = RngSpec::new(seed, 0);
        let mut phase = CoupledPhase::new(x0.clone(), y0.clone()).unwrap();
        let mut noise = spec.particle_noise(n);
        let mut kernel = CoupledKernel::new(&joint, cfg, params);
        for _ in 0..8 {
            kernel.step(&joint, &mut phase, &mut noise);
        }
        for i in 0..n {
            let mut alone = CoupledPhase::new(
                PositionState::new(1, d, x0.particle(i).to_vec()).unwrap(),
                PositionState::new(1, d, y0.particle(i).to_vec()).unwrap(),
            ).unwrap();
            let mut noise = ParticleNoise::from_streams(vec![spec.particle_rng(i)]);
            let mut k1 = CoupledKernel::new(&single, cfg, params);
            for _ in 0..8 {
                k1.step(&single, &mut alone, &mut noise);
            }
            prop_assert_eq!(alone.x.particle(0), phase.x.particle(i));
            prop_assert_eq!(alone.y.particle(0), phase.y.particle(i));
        }
    }

    #[test]
    fn coupling_is_faithful_on_the_diagonal((model, x) in model_and_point(), seed in any::<u64>(), r_tilde in 0.0f64..5.0) {
        let params = CouplingParams::new(0.7, r_tilde, 1e-9, 1).unwrap();
        let bad = diagonal_mismatch(&model, &x, seed, &params, 10);
        prop_assert!(bad.is_none(), "{:?}", bad);
    }

    #[test]
    fn f_matches_quadrature(r in 0.0f64..1.0, t in 0.05f64..3.0, r1 in 0.0f64..10.0) {
        let top = 10.0 * (r1 + t);
        let r = r * top;
        let exact = f_eval(r, t, r1);
        let quad = f_quadrature(r, t, r1);
        prop_assert!((exact - quad).abs() <= 1e-10, "{exact} vs {quad}");
    }

    #[test]
    fn f_is_concave_increasing(t in 0.05f64..3.0, r1 in 0.0f64..10.0) {
        let bad = f_shape_violation(t, r1);
        prop_assert!(bad.is_none(), "{:?}", bad);
    }

    #[test]
    fn metric_axioms(n in 1usize..5, d in 1usize..4, seed in any::<u64>(), t in 0.1f64..2.0, r1 in 0.0f64..5.0) {
        let mut rng = RngSpec::new(seed, 6).aux_rng(0);
        let x = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, 2.0);
        let y = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, 2.0);
        let z = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, 2.0);
        let rho = |a: &PositionState<f64>, b: &PositionState<f64>| rho_distance(a, b, t, r1).unwrap();
        let ell = |a: &PositionState<f64>, b: &PositionState<f64>| ell1_distance(a, b).unwrap();
        prop_assert_eq!(rho(&x, &x), 0.0);
        prop_assert_eq!(ell(&x, &x), 0.0);
        prop_assert_eq!(rho(&x, &y), rho(&y, &x));
        prop_assert_eq!(ell(&x, &y), ell(&y, &x));
        prop_assert!(rho(&x, &z) <= rho(&x, &y) + rho(&y, &z) + 1e-12);
        prop_assert!(ell(&x, &z) <= ell(&x, &y) + ell(&y, &z) + 1e-12);
    }

    #[test]
    fn rho_and_ell1_are_equivalent(n in 1usize..5, d in 1usize..4, seed in any::<u64>(), r in 0.0f64..2.0, t in 0.1f64..2.0, scale in 0.01f64..20.0) {
        let mut rng = RngSpec::new(seed, 7).aux_rng(0);
        let x = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, scale);
        let y = mfhmc::sampler::gaussian_position::<f64>(&mut rng, n, d, 0.0, scale);
        let params = RegularityParams::new(1.0, 2.0, 0.5, r, 0.0).unwrap();
        let bad = equivalence_violation(&x, &y, &params, t);
        prop_assert!(bad.is_none(), "{:?}", bad);
    }
}

#[test]
fn coupled_marginal_is_standard_normal() {
    let x = PositionState::new(4, 2, vec![0.2, 0.1, -0.6, 0.4, 2.0, 0.0, 0.0, -4.0]).unwrap();
    let y = PositionState::zeros(4, 2);
    let params = CouplingParams::new(0.8, 1.0, 1e-9, 1).unwrap();
    let report = marginal_check(&MarginalCheckConfig { x, y, params, draws: 100_000, seed: 21 }).unwrap();
    assert!(report.passed(), "{}", report.summary());
}

#[test]
fn one_step_contraction_with_nonconvex_radius() {
    // R > 0: the shift/reflection branches are active near the diagonal
    let t = 0.06;
    let cfg = TheoremCheckConfig {
        model: ModelConfig {
            confinement: ConfinementConfig::Quadratic { stiffness: 1.0 },
            interaction: InteractionSpec::Zero,
            epsilon: 0.0,
            n: 2,
            d: 2,
        },
        regularity: RegularityParams::new(1.0, 1.0, 0.0, 0.05, 0.0).unwrap(),
        integrator: IntegratorConfig::new(t, 1000).unwrap(),
        x: PositionState::new(2, 2, vec![0.1, 0.0, 1.0, 1.0]).unwrap(),
        y: PositionState::new(2, 2, vec![0.0, 0.0, 0.0, 1.0]).unwrap(),
        draws: 20_000,
        seed: 4,
        execution: Execution::parallel(0),
    };
    let report = contraction_theorem_check(&cfg).unwrap();
    assert!(report.get_verdict("conditions").is_none(), "{}", report.summary());
    assert!(report.passed(), "{}", report.summary());
}
