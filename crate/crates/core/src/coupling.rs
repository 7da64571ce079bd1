//! Particlewise coupling of two unadjusted HMC chains.
//!
//! Both chains share the velocity draw `ξ`. For particle `i` with
//! `z = xⁱ − yⁱ`, the partner velocity `ηⁱ` is
//!
//! * `ξⁱ` when `|z| ≥ R̃` (synchronous),
//! * `ξⁱ + γz` with probability `min(1, φ(e·ξⁱ + γ|z|)/φ(e·ξⁱ))` (shift),
//! * `ξⁱ − 2(e·ξⁱ)e` otherwise (reflection), `e = z/|z|`.
//!
//! Each `ηⁱ` is again standard normal, so both chains keep their marginal law.

use crate::error::{invalid, Error, Result};
use crate::integrator::{IntegratorConfig, VerletWorkspace};
use crate::model::{PositionState, Potential};
use crate::sampler::ParticleNoise;
use crate::scalar::{distance, dot, norm, Scalar};
use crate::theory::{f_eval, DerivedConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Synchronous,
    Shifted,
    Reflected,
}

/// How a rejected shift proposal is completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefreshRule {
    #[default]
    Particlewise,
    /// Keeps `ξⁱ` instead of reflecting. Breaks the marginal law; only
    /// useful as a negative control.
    WithoutReflection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingParams<S> {
    pub gamma: S,
    /// Synchronous threshold; `∞` keeps every particle on the shift /
    /// reflection branch.
    pub r_tilde: S,
    /// Stop once the mean particle distance drops below this.
    pub tol: S,
    pub max_steps: usize,
    pub rule: RefreshRule,
}

impl<S: Scalar> CouplingParams<S> {
    pub fn new(gamma: S, r_tilde: S, tol: S, max_steps: usize) -> Result<Self> {
        let p = Self { gamma, r_tilde, tol, max_steps, rule: RefreshRule::Particlewise };
        p.validate()?;
        Ok(p)
    }

    /// `γ` and `R̃` taken from the derived constants.
    pub fn from_constants(dc: &DerivedConstants<S>, tol: S, max_steps: usize) -> Result<Self> {
        Self::new(dc.gamma, dc.r_tilde, tol, max_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > S::zero()) || !self.gamma.is_finite() {
            return Err(invalid("gamma", "must be positive and finite"));
        }
        if !(self.r_tilde >= S::zero()) {
            return Err(invalid("r_tilde", "must be non-negative"));
        }
        if !(self.tol > S::zero()) {
            return Err(invalid("tol", "must be positive"));
        }
        Ok(())
    }

    /// `R₁ = (5/4)(R̃ + 2T)`, infinite when `R̃` is.
    pub fn r1(&self, duration: S) -> S {
        S::of(1.25) * (self.r_tilde + S::of(2.0) * duration)
    }
}

/// Couples one particle's velocity; writes `ηⁱ` into `eta`.
pub fn couple_velocity_particle_into<S: Scalar>(
    z: &[S],
    xi: &[S],
    u: f64,
    params: &CouplingParams<S>,
    eta: &mut [S],
) -> Branch {
    let r = norm(z);
    if r >= params.r_tilde {
        eta.copy_from_slice(xi);
        return Branch::Synchronous;
    }
    if r == S::zero() {
        // e is the first unit vector; the acceptance ratio is 1 and the shift is zero
        eta.copy_from_slice(xi);
        return Branch::Shifted;
    }
    let gamma = params.gamma;
    let e_xi = dot(z, xi) / r;
    let log_ratio = -gamma * r * e_xi - gamma * gamma * r * r / S::of(2.0);
    if u.ln() <= log_ratio.to_f64_lossy() {
        for ((o, &x), &zc) in eta.iter_mut().zip(xi).zip(z) {
            *o = x + gamma * zc;
        }
        return Branch::Shifted;
    }
    match params.rule {
        RefreshRule::Particlewise => {
            let scale = S::of(2.0) * e_xi / r;
            for ((o, &x), &zc) in eta.iter_mut().zip(xi).zip(z) {
                *o = x - scale * zc;
            }
        }
        RefreshRule::WithoutReflection => eta.copy_from_slice(xi),
    }
    Branch::Reflected
}

/// Couples one particle's velocity.
pub fn couple_velocity_particle<S: Scalar>(z: &[S], xi: &[S], u: f64, params: &CouplingParams<S>) -> (Vec<S>, Branch) {
    let mut eta = vec![S::zero(); xi.len()];
    let branch = couple_velocity_particle_into(z, xi, u, params, &mut eta);
    (eta, branch)
}

/// Draws `ξ` and the uniforms, and writes the coupled refreshment `(ξ, η)`.
///
/// Per particle, `d` normals then one uniform are drawn from that particle's
/// stream, whatever branch is taken.
pub fn refresh_velocities<S: Scalar>(
    x: &[S],
    y: &[S],
    d: usize,
    params: &CouplingParams<S>,
    noise: &mut ParticleNoise,
    xi: &mut [S],
    eta: &mut [S],
    branches: &mut [Branch],
) {
    let mut z = vec![S::zero(); d];
    for i in 0..branches.len() {
        let span = i * d..(i + 1) * d;
        noise.normal_particle(i, &mut xi[span.clone()]);
        let u = noise.uniform(i);
        for ((zc, &a), &b) in z.iter_mut().zip(&x[span.clone()]).zip(&y[span.clone()]) {
            *zc = a - b;
        }
        branches[i] = couple_velocity_particle_into(&z, &xi[span.clone()], u, params, &mut eta[span]);
    }
}

/// State of a coupled pair plus the branch each particle took last.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPhase<S> {
    pub x: PositionState<S>,
    pub y: PositionState<S>,
    /// Empty before the first step.
    pub branches: Vec<Branch>,
}

impl<S: Scalar> CoupledPhase<S> {
    pub fn new(x: PositionState<S>, y: PositionState<S>) -> Result<Self> {
        y.check_shape(x.n(), x.d())?;
        Ok(Self { x, y, branches: Vec::new() })
    }

    pub fn branch_counts(&self) -> [usize; 3] {
        let mut counts = [0; 3];
        for b in &self.branches {
            counts[*b as usize] += 1;
        }
        counts
    }
}

/// Buffers for repeated coupled transitions.
#[derive(Debug, Clone)]
pub struct CoupledKernel<S> {
    cfg: IntegratorConfig<S>,
    params: CouplingParams<S>,
    xi: Vec<S>,
    eta: Vec<S>,
    ws_x: VerletWorkspace<S>,
    ws_y: VerletWorkspace<S>,
}

impl<S: Scalar> CoupledKernel<S> {
    pub fn new<P: Potential<S>>(model: &P, cfg: IntegratorConfig<S>, params: CouplingParams<S>) -> Self {
        let len = model.n() * model.d();
        Self {
            cfg,
            params,
            xi: vec![S::zero(); len],
            eta: vec![S::zero(); len],
            ws_x: VerletWorkspace::new(len),
            ws_y: VerletWorkspace::new(len),
        }
    }

    pub fn params(&self) -> &CouplingParams<S> {
        &self.params
    }

    /// One coupled transition `(x, y) ↦ (q_T(x, ξ), q_T(y, η))`, in place.
    pub fn step<P: Potential<S>>(&mut self, model: &P, phase: &mut CoupledPhase<S>, noise: &mut ParticleNoise) {
        phase.branches.resize(model.n(), Branch::Synchronous);
        refresh_velocities(
            phase.x.as_slice(),
            phase.y.as_slice(),
            model.d(),
            &self.params,
            noise,
            &mut self.xi,
            &mut self.eta,
            &mut phase.branches,
        );
        let (h, steps) = (self.cfg.step_size(), self.cfg.steps());
        self.ws_x.flow(model, phase.x.as_mut_slice(), &mut self.xi, h, steps);
        self.ws_y.flow(model, phase.y.as_mut_slice(), &mut self.eta, h, steps);
    }
}

fn check_inputs<S: Scalar, P: Potential<S>>(model: &P, phase: &CoupledPhase<S>, noise: &ParticleNoise) -> Result<()> {
    phase.x.check_shape(model.n(), model.d())?;
    phase.y.check_shape(model.n(), model.d())?;
    if noise.n() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), actual: noise.n() });
    }
    Ok(())
}

pub fn coupled_hmc_step<S: Scalar, P: Potential<S>>(
    model: &P,
    phase: &CoupledPhase<S>,
    cfg: &IntegratorConfig<S>,
    params: &CouplingParams<S>,
    noise: &mut ParticleNoise,
) -> Result<CoupledPhase<S>> {
    params.validate()?;
    check_inputs(model, phase, noise)?;
    let mut out = phase.clone();
    CoupledKernel::new(model, *cfg, *params).step(model, &mut out, noise);
    Ok(out)
}

/// Distance statistics of a coupled pair at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingRecord<S> {
    pub step: usize,
    /// `(1/n) Σᵢ |Xⁱ − Yⁱ|`
    pub mean_distance: S,
    pub ell1: S,
    pub rho: S,
    pub n_sync: usize,
    pub n_shift: usize,
    pub n_reflect: usize,
}

impl<S: Scalar> CouplingRecord<S> {
    /// Records the pair; `ρ` uses the profile with duration `T` and cutoff `R₁`.
    pub fn of(step: usize, phase: &CoupledPhase<S>, duration: S, r1: S) -> Self {
        let mut ell1 = S::zero();
        let mut rho = S::zero();
        for (a, b) in phase.x.particles().zip(phase.y.particles()) {
            let r = distance(a, b);
            ell1 = ell1 + r;
            rho = rho + f_eval(r, duration, r1);
        }
        let [n_sync, n_shift, n_reflect] = phase.branch_counts();
        let n = S::from_usize(phase.x.n()).expect("particle count fits in a float");
        Self { step, mean_distance: ell1 / n, ell1, rho, n_sync, n_shift, n_reflect }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTrace<S> {
    pub records: Vec<CouplingRecord<S>>,
    /// Mean distance fell below `tol`.
    pub converged: bool,
    /// A distance became non-finite.
    pub diverged: bool,
    pub final_phase: CoupledPhase<S>,
}

impl<S: Scalar> CouplingTrace<S> {
    pub fn steps(&self) -> usize {
        self.records.last().map_or(0, |r| r.step)
    }

    pub fn mean_distances(&self) -> Vec<S> {
        self.records.iter().map(|r| r.mean_distance).collect()
    }
}

/// Iterates coupled transitions until the mean distance is below `tol` or
/// `max_steps` transitions have run.
pub fn run_coupled_chain<S: Scalar, P: Potential<S>>(
    model: &P,
    x0: &PositionState<S>,
    y0: &PositionState<S>,
    cfg: &IntegratorConfig<S>,
    params: &CouplingParams<S>,
    noise: &mut ParticleNoise,
) -> Result<CouplingTrace<S>> {
    run_coupled_chain_with(model, x0, y0, cfg, params, noise, |_, _| {})
}

/// As [`run_coupled_chain`], calling `observe(step, phase)` on every state
/// including the initial one.
pub fn run_coupled_chain_with<S: Scalar, P: Potential<S>, F: FnMut(usize, &CoupledPhase<S>)>(
    model: &P,
    x0: &PositionState<S>,
    y0: &PositionState<S>,
    cfg: &IntegratorConfig<S>,
    params: &CouplingParams<S>,
    noise: &mut ParticleNoise,
    mut observe: F,
) -> Result<CouplingTrace<S>> {
    params.validate()?;
    let mut phase = CoupledPhase::new(x0.clone(), y0.clone())?;
    check_inputs(model, &phase, noise)?;
    let duration = cfg.duration();
    let r1 = params.r1(duration);
    let mut kernel = CoupledKernel::new(model, *cfg, *params);

    let mut records = vec![CouplingRecord::of(0, &phase, duration, r1)];
    observe(0, &phase);
    let mut converged = records[0].mean_distance < params.tol;
    let mut diverged = false;
    let mut step = 0;
    while !converged && step < params.max_steps {
        step += 1;
        kernel.step(model, &mut phase, noise);
        let rec = CouplingRecord::of(step, &phase, duration, r1);
        observe(step, &phase);
        records.push(rec);
        if !rec.mean_distance.is_finite() {
            diverged = true;
            break;
        }
        converged = rec.mean_distance < params.tol;
    }
    Ok(CouplingTrace { records, converged, diverged, final_phase: phase })
}
