//! Checkers shared by the property tests and the acceptance gate.
#![allow(dead_code)]

use mfhmc::coupling::{CoupledKernel, CoupledPhase, CouplingParams};
use mfhmc::integrator::{verlet_flow, verlet_path, IntegratorConfig, PhasePoint};
use mfhmc::model::{ConfinementSpec, InteractionSign, InteractionSpec, MeanFieldModel, PositionState};
use mfhmc::sampler::{run_chain, ParticleNoise, RngSpec};
use mfhmc::theory::{derive_constants, ell1_distance, f_derivative, f_eval, rho_distance, RegularityParams};

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Maximum over coordinates of `|∂U_fd − ∂U| / max(1, |∇U|_∞)` with central
/// differences.
pub fn gradient_fd_error(model: &MeanFieldModel<f64>, x: &PositionState<f64>) -> f64 {
    let grad = model.grad_full(x).unwrap();
    let scale = grad.as_slice().iter().fold(1.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    for k in 0..x.as_slice().len() {
        let step = 1e-5 * x.as_slice()[k].abs().max(1.0);
        let mut plus = x.clone();
        plus.as_mut_slice()[k] += step;
        let mut minus = x.clone();
        minus.as_mut_slice()[k] -= step;
        let fd = (model.potential_energy(&plus).unwrap() - model.potential_energy(&minus).unwrap()) / (2.0 * step);
        worst = worst.max((fd - grad.as_slice()[k]).abs() / scale);
    }
    worst
}

/// Step count keeping `h <= 0.05`, where Verlet stays stable for every
/// instance family the suites draw (the Rosenbrock force is cubic).
pub fn stable_steps(t: f64) -> usize {
    (t / 0.05).ceil().max(1.0) as usize
}

/// Largest deviation of `N ∘ F ∘ N ∘ F` from the identity, relative to the
/// largest coordinate the forward flow visits.
pub fn reversibility_error(model: &MeanFieldModel<f64>, start: &PhasePoint<f64>, cfg: &IntegratorConfig<f64>) -> f64 {
    let mut mid = verlet_flow(model, start, cfg).unwrap();
    mid.negate_momentum();
    let mut back = verlet_flow(model, &mid, cfg).unwrap();
    back.negate_momentum();
    let scale = [&start.q, &start.p, &mid.q, &mid.p]
        .iter()
        .flat_map(|s| s.as_slice())
        .fold(1.0f64, |m, v| m.max(v.abs()));
    start
        .q
        .as_slice()
        .iter()
        .zip(back.q.as_slice())
        .chain(start.p.as_slice().iter().zip(back.p.as_slice()))
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

/// Checks the a-priori position and velocity bounds for the Verlet path of
/// a model with `∇V(0) = 0`, `∇V` `L`-Lipschitz and `∇W` `L̃`-Lipschitz.
/// The interpolated path is piecewise linear in both position and velocity,
/// so its maxima sit on the grid.
pub fn apriori_bounds_violation(
    model: &MeanFieldModel<f64>,
    start: &PhasePoint<f64>,
    cfg: &IntegratorConfig<f64>,
    l: f64,
    l_tilde: f64,
) -> Option<String> {
    let n = model.n();
    let eps = model.epsilon();
    let t = cfg.duration();
    let h = cfg.step_size();
    let tt = t * t + t * h;
    let path = verlet_path(model, start, cfg).unwrap();
    let x = &start.q;
    let v = &start.p;
    let reach: Vec<f64> = (0..n)
        .map(|i| {
            let moved: Vec<f64> = x.particle(i).iter().zip(v.particle(i)).map(|(a, b)| a + t * b).collect();
            norm(x.particle(i)).max(norm(&moved))
        })
        .collect();
    let max_pos: Vec<f64> = (0..n)
        .map(|i| path.iter().map(|p| norm(p.q.particle(i))).fold(0.0, f64::max))
        .collect();
    let max_vel: Vec<f64> = (0..n)
        .map(|i| path.iter().map(|p| norm(p.p.particle(i))).fold(0.0, f64::max))
        .collect();
    let max_sum_pos = path.iter().map(|p| (0..n).map(|i| norm(p.q.particle(i))).sum::<f64>()).fold(0.0, f64::max);
    let max_sum_vel = path.iter().map(|p| (0..n).map(|i| norm(p.p.particle(i))).sum::<f64>()).fold(0.0, f64::max);
    let others: Vec<f64> = (0..n)
        .map(|i| {
            path.iter()
                .map(|p| (0..n).filter(|&j| j != i).map(|j| norm(p.q.particle(j))).sum::<f64>())
                .fold(0.0, f64::max)
        })
        .collect();

    let a2 = l + 2.0 * eps * l_tilde;
    let a4 = l + 4.0 * eps * l_tilde;
    let slack = |bound: f64| bound * (1.0 + 1e-12) + 1e-12;
    let nf = n as f64;
    for i in 0..n {
        let pos = (1.0 + a2 * tt) * reach[i] + 2.0 * eps * l_tilde * tt / nf * others[i];
        if max_pos[i] > slack(pos) {
            return Some(format!("particle {i} position {} > {pos}", max_pos[i]));
        }
        let vel = norm(v.particle(i))
            + a2 * t * (1.0 + a2 * tt) * reach[i]
            + 2.0 * eps * l_tilde * t / nf * (1.0 + a2 * tt) * others[i];
        if max_vel[i] > slack(vel) {
            return Some(format!("particle {i} velocity {} > {vel}", max_vel[i]));
        }
    }
    let reach_sum: f64 = reach.iter().sum();
    let pos_sum = (1.0 + a4 * tt) * reach_sum;
    if max_sum_pos > slack(pos_sum) {
        return Some(format!("summed position {max_sum_pos} > {pos_sum}"));
    }
    let v_sum: f64 = (0..n).map(|i| norm(v.particle(i))).sum();
    let vel_sum = a4 * t * (1.0 + a4 * tt) * reach_sum + v_sum;
    if max_sum_vel > slack(vel_sum) {
        return Some(format!("summed velocity {max_sum_vel} > {vel_sum}"));
    }
    None
}

/// A random conforming instance for the a-priori bounds: quadratic `V`,
/// quadratic `W` of either sign, and `(t, h)` with `(L + 4εL̃)(t² + th) ≤ 1`.
pub struct AprioriInstance {
    pub model: MeanFieldModel<f64>,
    pub start: PhasePoint<f64>,
    pub cfg: IntegratorConfig<f64>,
    pub l: f64,
    pub l_tilde: f64,
}

pub fn apriori_instance(u: &[f64; 8], n: usize, d: usize, x: Vec<f64>, v: Vec<f64>) -> AprioriInstance {
    let k = 0.1 + 2.0 * u[0];
    let eps = 2.0 * u[1];
    let sign = if u[2] < 0.5 { InteractionSign::Attractive } else { InteractionSign::Repulsive };
    let steps = 1 + (u[3] * 20.0) as usize;
    let a4 = k + 4.0 * eps;
    // (t² + th) = t²(1 + 1/steps) ≤ fraction / a4
    let fraction = 0.05 + 0.95 * u[4];
    let t = (fraction / (a4 * (1.0 + 1.0 / steps as f64))).sqrt();
    let model = MeanFieldModel::new(
        ConfinementSpec::Quadratic { stiffness: k },
        InteractionSpec::Quadratic { sign },
        eps,
        n,
        d,
    )
    .unwrap();
    let start = PhasePoint::new(PositionState::new(n, d, x).unwrap(), PositionState::new(n, d, v).unwrap()).unwrap();
    AprioriInstance { model, start, cfg: IntegratorConfig::new(t, steps).unwrap(), l: k, l_tilde: 1.0 }
}

/// With `ε = 0`, each particle of an `n`-particle chain equals the
/// single-particle chain driven by that particle's stream, bitwise.
pub fn factorization_mismatch(confinement: ConfinementSpec<f64>, n: usize, d: usize, seed: u64, x0: &PositionState<f64>) -> Option<String> {
    let cfg = IntegratorConfig::new(1.0, 7).unwrap();
    let joint = MeanFieldModel::new(
        confinement.clone(),
        InteractionSpec::Quadratic { sign: InteractionSign::Attractive },
        0.0,
        n,
        d,
    )
    .unwrap();
    let spec = RngSpec::new(seed, 0);
    let trace = run_chain(&joint, x0, 25, &cfg, &mut spec.particle_noise(n), 1).unwrap();
    let single = MeanFieldModel::product(confinement, 1, d).unwrap();
    for i in 0..n {
        let xi0 = PositionState::new(1, d, x0.particle(i).to_vec()).unwrap();
        let mut noise = ParticleNoise::from_streams(vec![spec.particle_rng(i)]);
        let alone = run_chain(&single, &xi0, 25, &cfg, &mut noise, 1).unwrap();
        for (k, (a, b)) in trace.states.iter().zip(&alone.states).enumerate() {
            let lhs: Vec<u64> = a.particle(i).iter().map(|v| v.to_bits()).collect();
            let rhs: Vec<u64> = b.particle(0).iter().map(|v| v.to_bits()).collect();
            if lhs != rhs {
                return Some(format!("particle {i} differs at step {k}"));
            }
        }
    }
    None
}

/// Coupled chains started on the diagonal stay on it, bitwise, for `steps`
/// transitions.
pub fn diagonal_mismatch(model: &MeanFieldModel<f64>, x0: &PositionState<f64>, seed: u64, params: &CouplingParams<f64>, steps: usize) -> Option<String> {
    let cfg = IntegratorConfig::new(0.8, 9).unwrap();
    let mut noise = RngSpec::new(seed, 0).particle_noise(model.n());
    let mut kernel = CoupledKernel::new(model, cfg, *params);
    let mut phase = CoupledPhase::new(x0.clone(), x0.clone()).unwrap();
    for k in 1..=steps {
        kernel.step(model, &mut phase, &mut noise);
        let same = phase.x.as_slice().iter().zip(phase.y.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Some(format!("off the diagonal at step {k}"));
        }
    }
    None
}

/// Adaptive Simpson quadrature of `∫₀ʳ exp(−min(R₁, s)/T) ds`, split at `R₁`.
pub fn f_quadrature(r: f64, t: f64, r1: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let integrand = |s: f64| (-s.min(r1) / t).exp();
    let piece = |a: f64, b: f64| {
        if b <= a {
            return 0.0;
        }
        let (fa, fb, fm) = (integrand(a), integrand(b), integrand(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        simpson(&integrand, a, b, fa, fm, fb, whole, 1e-14, 40)
    };
    piece(0.0, r.min(r1)) + piece(r1, r.max(r1))
}

/// Checks concavity, monotonicity, `f(0) = 0`, `f′(0) = 1` and
/// `r f′(r) ≤ f(r) ≤ r` on a grid.
pub fn f_shape_violation(t: f64, r1: f64) -> Option<String> {
    if f_eval(0.0, t, r1) != 0.0 {
        return Some("f(0) != 0".into());
    }
    let fd0 = f_eval(1e-7, t, r1) / 1e-7;
    if (fd0 - 1.0).abs() > 1e-6 || (f_derivative(0.0, t, r1) - 1.0).abs() > 1e-15 {
        return Some(format!("f'(0) = {fd0}"));
    }
    let top = 10.0 * (r1 + t);
    let grid: Vec<f64> = (0..=2000).map(|k| top * k as f64 / 2000.0).collect();
    for w in grid.windows(3) {
        let (a, b, c) = (f_eval(w[0], t, r1), f_eval(w[1], t, r1), f_eval(w[2], t, r1));
        // beyond R₁ the slope can fall below the resolution of f itself
        let resolvable = f_derivative(w[1], t, r1) * (w[1] - w[0]) > 1e-15 * b;
        if b < a || (resolvable && b == a) {
            return Some(format!("not increasing at {}", w[1]));
        }
        // second difference, with room for rounding
        if c - 2.0 * b + a > 1e-8 * (w[1] - w[0]) {
            return Some(format!("not concave at {}", w[1]));
        }
    }
    for &r in &grid {
        let f = f_eval(r, t, r1);
        let lower = r * f_derivative(r, t, r1);
        if lower > f * (1.0 + 1e-14) + 1e-300 || f > r * (1.0 + 1e-14) {
            return Some(format!("r f'(r) <= f(r) <= r fails at {r}"));
        }
    }
    None
}

/// `ρ ≤ ℓ¹ ≤ Mρ` for one pair, with `M` from the derived constants.
pub fn equivalence_violation(x: &PositionState<f64>, y: &PositionState<f64>, params: &RegularityParams<f64>, t: f64) -> Option<String> {
    let dc = derive_constants(params, t).unwrap();
    let rho = rho_distance(x, y, t, dc.r1).unwrap();
    let ell = ell1_distance(x, y).unwrap();
    let tol = 1e-12 * ell.max(1e-300);
    if rho > ell + tol || ell > dc.m * rho + tol {
        return Some(format!("rho = {rho}, l1 = {ell}, M = {}", dc.m));
    }
    None
}
