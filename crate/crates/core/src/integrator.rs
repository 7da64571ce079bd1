//! Velocity Verlet for the mean-field Hamiltonian `H(x, v) = U(x) + |v|²/2`
//! (unit masses), evaluated at grid times `kh`.

use crate::error::{invalid, Error, Result};
use crate::model::{PositionState, Potential};
use crate::scalar::Scalar;

/// Duration `T` and number of Verlet steps `T/h`.
///
/// The step count is stored as an integer so that `T/h ∈ ℕ` holds by
/// construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig<S> {
    duration: S,
    steps: usize,
}

impl<S: Scalar> IntegratorConfig<S> {
    pub fn new(duration: S, steps: usize) -> Result<Self> {
        if !(duration > S::zero()) || !duration.is_finite() {
            return Err(invalid("T", "duration must be positive and finite"));
        }
        if steps == 0 {
            return Err(invalid("steps", "T/h must be a positive integer"));
        }
        Ok(Self { duration, steps })
    }

    pub fn duration(&self) -> S {
        self.duration
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> S {
        self.duration / S::from_usize(self.steps).expect("step count fits in a float")
    }
}

/// Position and velocity of all particles.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint<S> {
    pub q: PositionState<S>,
    pub p: PositionState<S>,
}

impl<S: Scalar> PhasePoint<S> {
    pub fn new(q: PositionState<S>, p: PositionState<S>) -> Result<Self> {
        p.check_shape(q.n(), q.d())?;
        Ok(Self { q, p })
    }

    /// Momentum reversal `(q, p) ↦ (q, −p)`.
    pub fn negate_momentum(&mut self) {
        self.p.as_mut_slice().iter_mut().for_each(|v| *v = -*v);
    }

    fn check_model<P: Potential<S>>(&self, model: &P) -> Result<()> {
        self.q.check_shape(model.n(), model.d())?;
        self.p.check_shape(model.n(), model.d())
    }
}

pub fn hamiltonian<S: Scalar, P: Potential<S>>(model: &P, phase: &PhasePoint<S>) -> Result<S> {
    phase.check_model(model)?;
    let kinetic = phase.p.as_slice().iter().fold(S::zero(), |acc, &v| acc + v * v) / S::of(2.0);
    Ok(model.energy_of(phase.q.as_slice()) + kinetic)
}

/// Scratch buffers for repeated flows; holds the gradient carried from one
/// Verlet step to the next.
#[derive(Debug, Clone)]
pub(crate) struct VerletWorkspace<S> {
    grad: Vec<S>,
    grad_next: Vec<S>,
}

impl<S: Scalar> VerletWorkspace<S> {
    pub(crate) fn new(len: usize) -> Self {
        Self { grad: vec![S::zero(); len], grad_next: vec![S::zero(); len] }
    }

    /// Runs `steps` kick-drift-kick steps in place. One gradient evaluation
    /// per step; the first one at `q` is computed here.
    pub(crate) fn flow<P: Potential<S>>(&mut self, model: &P, q: &mut [S], p: &mut [S], h: S, steps: usize) {
        model.gradient_into(q, &mut self.grad);
        for _ in 0..steps {
            self.step_with_cached_gradient(model, q, p, h);
        }
    }

    /// Advances one step assuming `self.grad` holds `∇U(q)`; leaves `∇U(q')`
    /// in `self.grad`.
    pub(crate) fn step_with_cached_gradient<P: Potential<S>>(&mut self, model: &P, q: &mut [S], p: &mut [S], h: S) {
        let half_h = h / S::of(2.0);
        for ((qi, pi), &g) in q.iter_mut().zip(p.iter_mut()).zip(&self.grad) {
            *pi = *pi - half_h * g;
            *qi = *qi + h * *pi;
        }
        model.gradient_into(q, &mut self.grad_next);
        for (pi, &g) in p.iter_mut().zip(&self.grad_next) {
            *pi = *pi - half_h * g;
        }
        std::mem::swap(&mut self.grad, &mut self.grad_next);
    }

    pub(crate) fn prime<P: Potential<S>>(&mut self, model: &P, q: &[S]) {
        model.gradient_into(q, &mut self.grad);
    }
}

/// One velocity Verlet step:
/// `q' = q + h p − (h²/2)∇U(q)`, `p' = p − (h/2)(∇U(q) + ∇U(q'))`.
pub fn verlet_step<S: Scalar, P: Potential<S>>(model: &P, phase: &PhasePoint<S>, h: S) -> Result<PhasePoint<S>> {
    if !(h > S::zero()) || !h.is_finite() {
        return Err(invalid("h", "step size must be positive"));
    }
    phase.check_model(model)?;
    let mut out = phase.clone();
    let mut ws = VerletWorkspace::new(phase.q.as_slice().len());
    ws.flow(model, out.q.as_mut_slice(), out.p.as_mut_slice(), h, 1);
    Ok(out)
}

/// Composition of `T/h` Verlet steps; returns `(q_T, p_T)`.
pub fn verlet_flow<S: Scalar, P: Potential<S>>(
    model: &P,
    phase: &PhasePoint<S>,
    cfg: &IntegratorConfig<S>,
) -> Result<PhasePoint<S>> {
    phase.check_model(model)?;
    let mut out = phase.clone();
    let mut ws = VerletWorkspace::new(phase.q.as_slice().len());
    ws.flow(model, out.q.as_mut_slice(), out.p.as_mut_slice(), cfg.step_size(), cfg.steps());
    Ok(out)
}

/// All grid-time states `(q_{kh}, p_{kh})` for `k = 0..=T/h`.
pub fn verlet_path<S: Scalar, P: Potential<S>>(
    model: &P,
    phase: &PhasePoint<S>,
    cfg: &IntegratorConfig<S>,
) -> Result<Vec<PhasePoint<S>>> {
    phase.check_model(model)?;
    let h = cfg.step_size();
    let mut current = phase.clone();
    let mut ws = VerletWorkspace::new(phase.q.as_slice().len());
    ws.prime(model, current.q.as_slice());
    let mut path = Vec::with_capacity(cfg.steps() + 1);
    path.push(current.clone());
    for _ in 0..cfg.steps() {
        ws.step_with_cached_gradient(model, current.q.as_mut_slice(), current.p.as_mut_slice(), h);
        path.push(current.clone());
    }
    Ok(path)
}

/// Exact flow of `V(x) = k|x|²/2` with no interaction, componentwise:
/// `q_t = q cos(ωt) + (p/ω) sin(ωt)`, `p_t = −qω sin(ωt) + p cos(ωt)`, `ω = √k`.
pub fn harmonic_exact_flow<S: Scalar>(stiffness: S, phase: &PhasePoint<S>, t: S) -> Result<PhasePoint<S>> {
    if !(stiffness > S::zero()) {
        return Err(invalid("stiffness", "harmonic stiffness must be positive"));
    }
    if phase.p.as_slice().len() != phase.q.as_slice().len() {
        return Err(Error::DimensionMismatch {
            expected: phase.q.as_slice().len(),
            actual: phase.p.as_slice().len(),
        });
    }
    let mut out = phase.clone();
    harmonic_exact_in_place(stiffness, out.q.as_mut_slice(), out.p.as_mut_slice(), t);
    Ok(out)
}

pub(crate) fn harmonic_exact_in_place<S: Scalar>(stiffness: S, q: &mut [S], p: &mut [S], t: S) {
    let omega = stiffness.sqrt();
    let (sin, cos) = (omega * t).sin_cos();
    for (qi, pi) in q.iter_mut().zip(p.iter_mut()) {
        let (q0, p0) = (*qi, *pi);
        *qi = q0 * cos + p0 / omega * sin;
        *pi = -q0 * omega * sin + p0 * cos;
    }
}
