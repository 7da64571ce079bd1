//! Mean-field potentials
//!
//! ```text
//! U(x) = Σᵢ [ V(xⁱ) + (ε/n) Σ_{j≠i} W(xⁱ − xʲ) ]
//! ```
//!
//! with a confinement `V` acting on each particle and a pairwise interaction
//! `W`. Positions are stored particle-major: particle `i` occupies
//! `x[i*d .. (i+1)*d]`.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Position of all `n` particles, each a `d`-vector, stored particle-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionState<S> {
    data: Vec<S>,
    n: usize,
    d: usize,
}

impl<S: Scalar> PositionState<S> {
    pub fn new(n: usize, d: usize, data: Vec<S>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(invalid("shape", "n and d must be at least 1"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, actual: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("position", "entries must be finite"));
        }
        Ok(Self { data, n, d })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        assert!(n >= 1 && d >= 1, "n and d must be at least 1");
        Self { data: vec![S::zero(); n * d], n, d }
    }

    /// Builds a state from per-particle vectors.
    pub fn from_particles(particles: &[Vec<S>]) -> Result<Self> {
        let n = particles.len();
        let d = particles.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * d);
        for p in particles {
            if p.len() != d {
                return Err(Error::DimensionMismatch { expected: d, actual: p.len() });
            }
            data.extend_from_slice(p);
        }
        Self::new(n, d, data)
    }

    /// Wraps raw data without the finiteness check; used on hot paths where
    /// the data came out of an integrator.
    pub(crate) fn from_raw(n: usize, d: usize, data: Vec<S>) -> Self {
        debug_assert_eq!(data.len(), n * d);
        Self { data, n, d }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn particle(&self, i: usize) -> &[S] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn particle_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn particles(&self) -> std::slice::ChunksExact<'_, S> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub(crate) fn check_shape(&self, n: usize, d: usize) -> Result<()> {
        if self.d != d {
            return Err(Error::DimensionMismatch { expected: d, actual: self.d });
        }
        if self.n != n {
            return Err(Error::DimensionMismatch { expected: n * d, actual: self.n * self.d });
        }
        Ok(())
    }
}

/// Per-particle confinement potential `V`.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfinementSpec<S> {
    /// `V(p) = k|p|²/2`.
    Quadratic { stiffness: S },
    /// Negative log of an equal-weight, unit-covariance Gaussian mixture
    /// (normalization dropped): `V(p) = −log Σₖ exp(−|p − μₖ|²/2)`.
    GaussianMixture { means: Vec<Vec<S>> },
    /// `V(p) = (a − p₁)² + b(p₂ − p₁²)²`, two-dimensional only.
    Rosenbrock { a: S, b: S },
}

impl<S: Scalar> ConfinementSpec<S> {
    fn validate(&self, d: usize) -> Result<()> {
        match self {
            Self::Quadratic { stiffness } => {
                if !(*stiffness > S::zero()) || !stiffness.is_finite() {
                    return Err(invalid("stiffness", "quadratic stiffness must be positive"));
                }
            }
            Self::GaussianMixture { means } => {
                if means.is_empty() {
                    return Err(invalid("means", "mixture needs at least one mean"));
                }
                if let Some(bad) = means.iter().find(|m| m.len() != d) {
                    return Err(Error::DimensionMismatch { expected: d, actual: bad.len() });
                }
                if means.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invalid("means", "mixture means must be finite"));
                }
            }
            Self::Rosenbrock { a, b } => {
                if d != 2 {
                    return Err(invalid("d", "Rosenbrock confinement requires d = 2"));
                }
                if !a.is_finite() || !b.is_finite() {
                    return Err(invalid("rosenbrock", "a and b must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn energy(&self, p: &[S]) -> S {
        match self {
            Self::Quadratic { stiffness } => {
                *stiffness * p.iter().fold(S::zero(), |acc, &v| acc + v * v) / S::of(2.0)
            }
            Self::GaussianMixture { means } => {
                let half = S::of(0.5);
                let log_terms = means.iter().map(|mu| -half * squared_distance(p, mu));
                let max = log_terms.clone().fold(S::neg_infinity(), S::max);
                let sum = log_terms.fold(S::zero(), |acc, l| acc + (l - max).exp());
                -(max + sum.ln())
            }
            Self::Rosenbrock { a, b } => {
                let r = *a - p[0];
                let s = p[1] - p[0] * p[0];
                r * r + *b * s * s
            }
        }
    }

    /// Writes `∇V(p)` into `out`.
    pub fn gradient_into(&self, p: &[S], out: &mut [S]) {
        match self {
            Self::Quadratic { stiffness } => {
                for (o, &v) in out.iter_mut().zip(p) {
                    *o = *stiffness * v;
                }
            }
            Self::GaussianMixture { means } => {
                // softmax weights over components, shifted by the largest log-weight
                let half = S::of(0.5);
                let max = means
                    .iter()
                    .map(|mu| -half * squared_distance(p, mu))
                    .fold(S::neg_infinity(), S::max);
                out.iter_mut().for_each(|o| *o = S::zero());
                let mut total = S::zero();
                for mu in means {
                    let w = (-half * squared_distance(p, mu) - max).exp();
                    total = total + w;
                    for ((o, &pc), &mc) in out.iter_mut().zip(p).zip(mu) {
                        *o = *o + w * (pc - mc);
                    }
                }
                out.iter_mut().for_each(|o| *o = *o / total);
            }
            Self::Rosenbrock { a, b } => {
                let s = p[1] - p[0] * p[0];
                let two = S::of(2.0);
                out[0] = -two * (*a - p[0]) - S::of(4.0) * *b * p[0] * s;
                out[1] = two * *b * s;
            }
        }
    }
}

#[inline]
fn squared_distance<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Sign of a quadratic interaction `W(u) = sign·|u|²/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionSign {
    /// `+|u|²/2`: particles are pulled together.
    Attractive,
    /// `−|u|²/2`.
    Repulsive,
}

impl InteractionSign {
    fn flipped(self) -> Self {
        match self {
            Self::Attractive => Self::Repulsive,
            Self::Repulsive => Self::Attractive,
        }
    }

    fn value<S: Scalar>(self) -> S {
        match self {
            Self::Attractive => S::one(),
            Self::Repulsive => -S::one(),
        }
    }
}

/// Pairwise interaction potential `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InteractionSpec {
    Zero,
    Quadratic { sign: InteractionSign },
}

/// Anything that provides `U` and `∇U` on particle-major position arrays.
///
/// The integrator, sampler and coupling are generic over this so tests can
/// swap in reference potentials such as [`FreeParticles`].
pub trait Potential<S: Scalar>: Sync {
    fn n(&self) -> usize;
    fn d(&self) -> usize;

    /// `U(x)` on a raw particle-major slice of length `n·d`.
    fn energy_of(&self, x: &[S]) -> S;

    /// Writes `∇U(x)` into `out`; both slices have length `n·d`.
    fn gradient_into(&self, x: &[S], out: &mut [S]);
}

/// The zero potential: free particles moving on straight lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParticles {
    pub n: usize,
    pub d: usize,
}

impl<S: Scalar> Potential<S> for FreeParticles {
    fn n(&self) -> usize {
        self.n
    }

    fn d(&self) -> usize {
        self.d
    }

    fn energy_of(&self, _x: &[S]) -> S {
        S::zero()
    }

    fn gradient_into(&self, _x: &[S], out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
}

/// A mean-field model `(V, W, ε, n, d)` with `ε ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldModel<S> {
    confinement: ConfinementSpec<S>,
    interaction: InteractionSpec,
    epsilon: S,
    n: usize,
    d: usize,
}

impl<S: Scalar> MeanFieldModel<S> {
    /// A negative `epsilon` is stored as `|epsilon|` with the interaction
    /// sign flipped.
    pub fn new(
        confinement: ConfinementSpec<S>,
        interaction: InteractionSpec,
        epsilon: S,
        n: usize,
        d: usize,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n", "particle count must be at least 1"));
        }
        if d == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        if !epsilon.is_finite() {
            return Err(invalid("epsilon", "interaction strength must be finite"));
        }
        confinement.validate(d)?;
        let (epsilon, interaction) = if epsilon < S::zero() {
            let flipped = match interaction {
                InteractionSpec::Zero => InteractionSpec::Zero,
                InteractionSpec::Quadratic { sign } => InteractionSpec::Quadratic { sign: sign.flipped() },
            };
            (-epsilon, flipped)
        } else {
            (epsilon, interaction)
        };
        Ok(Self { confinement, interaction, epsilon, n, d })
    }

    /// Product model: independent particles in `V`, no interaction.
    pub fn product(confinement: ConfinementSpec<S>, n: usize, d: usize) -> Result<Self> {
        Self::new(confinement, InteractionSpec::Zero, S::zero(), n, d)
    }

    pub fn confinement(&self) -> &ConfinementSpec<S> {
        &self.confinement
    }

    pub fn interaction(&self) -> InteractionSpec {
        self.interaction
    }

    pub fn epsilon(&self) -> S {
        self.epsilon
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Same potentials and `ε`, different particle count.
    pub fn with_particles(&self, n: usize) -> Result<Self> {
        Self::new(self.confinement.clone(), self.interaction, self.epsilon, n, self.d)
    }

    fn interaction_sign(&self) -> Option<S> {
        match self.interaction {
            InteractionSpec::Quadratic { sign } if self.epsilon != S::zero() => Some(sign.value()),
            _ => None,
        }
    }

    fn scale(&self) -> S {
        self.epsilon / S::from_usize(self.n).expect("particle count fits in a float")
    }

    pub fn potential_energy(&self, x: &PositionState<S>) -> Result<S> {
        x.check_shape(self.n, self.d)?;
        Ok(self.energy_of(x.as_slice()))
    }

    /// `∇ᵢU(x) = ∇V(xⁱ) + (ε/n) Σ_{j≠i} [∇W(xⁱ − xʲ) − ∇W(xʲ − xⁱ)]`.
    pub fn grad_particle(&self, x: &PositionState<S>, i: usize) -> Result<Vec<S>> {
        x.check_shape(self.n, self.d)?;
        if i >= self.n {
            return Err(Error::IndexOutOfRange { index: i, n: self.n });
        }
        let mut out = vec![S::zero(); self.d];
        self.grad_particle_into(x.as_slice(), i, &mut out);
        Ok(out)
    }

    fn grad_particle_into(&self, x: &[S], i: usize, out: &mut [S]) {
        let d = self.d;
        let xi = &x[i * d..(i + 1) * d];
        self.confinement.gradient_into(xi, out);
        let Some(sign) = self.interaction_sign() else { return };
        let mut acc = vec![S::zero(); d];
        for j in (0..self.n).filter(|&j| j != i) {
            let xj = &x[j * d..(j + 1) * d];
            for c in 0..d {
                let u = xi[c] - xj[c];
                acc[c] = acc[c] + (sign * u - sign * (-u));
            }
        }
        let scale = self.scale();
        for (o, a) in out.iter_mut().zip(acc) {
            *o = *o + scale * a;
        }
    }

    pub fn grad_full(&self, x: &PositionState<S>) -> Result<PositionState<S>> {
        x.check_shape(self.n, self.d)?;
        let mut out = vec![S::zero(); self.n * self.d];
        self.gradient_into(x.as_slice(), &mut out);
        Ok(PositionState::from_raw(self.n, self.d, out))
    }

    /// Per-particle gradients computed in parallel without pair reuse.
    /// Agrees with [`grad_full`](Self::grad_full) bitwise for the built-in
    /// potentials; only the work distribution differs.
    pub fn grad_full_parallel(&self, x: &PositionState<S>) -> Result<PositionState<S>> {
        x.check_shape(self.n, self.d)?;
        let mut out = vec![S::zero(); self.n * self.d];
        let xs = x.as_slice();
        out.par_chunks_mut(self.d)
            .enumerate()
            .for_each(|(i, o)| self.grad_particle_into(xs, i, o));
        Ok(PositionState::from_raw(self.n, self.d, out))
    }

    /// Energy split into confinement and interaction parts.
    pub fn energy_parts(&self, x: &PositionState<S>) -> Result<(S, S)> {
        x.check_shape(self.n, self.d)?;
        Ok(self.energy_parts_of(x.as_slice()))
    }

    fn energy_parts_of(&self, x: &[S]) -> (S, S) {
        let d = self.d;
        let confinement = x
            .chunks_exact(d)
            .fold(S::zero(), |acc, p| acc + self.confinement.energy(p));
        let Some(sign) = self.interaction_sign() else { return (confinement, S::zero()) };
        let half = S::of(0.5);
        let mut pair_sum = S::zero();
        for i in 0..self.n {
            let xi = &x[i * d..(i + 1) * d];
            for j in (0..self.n).filter(|&j| j != i) {
                let xj = &x[j * d..(j + 1) * d];
                pair_sum = pair_sum + sign * half * squared_distance(xi, xj);
            }
        }
        (confinement, self.scale() * pair_sum)
    }
}

impl<S: Scalar> Potential<S> for MeanFieldModel<S> {
    fn n(&self) -> usize {
        self.n
    }

    fn d(&self) -> usize {
        self.d
    }

    fn energy_of(&self, x: &[S]) -> S {
        let (v, w) = self.energy_parts_of(x);
        v + w
    }

    /// Sequential O(n²) pass over unordered pairs; each pair term is computed
    /// once and applied with opposite signs, so every particle receives its
    /// contributions in ascending partner order.
    fn gradient_into(&self, x: &[S], out: &mut [S]) {
        let d = self.d;
        for (p, o) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.confinement.gradient_into(p, o);
        }
        let Some(sign) = self.interaction_sign() else { return };
        let mut acc = vec![S::zero(); x.len()];
        for a in 0..self.n {
            for b in a + 1..self.n {
                for c in 0..d {
                    let u = x[a * d + c] - x[b * d + c];
                    let g = sign * u - sign * (-u);
                    acc[a * d + c] = acc[a * d + c] + g;
                    acc[b * d + c] = acc[b * d + c] - g;
                }
            }
        }
        let scale = self.scale();
        for (o, a) in out.iter_mut().zip(acc) {
            *o = *o + scale * a;
        }
    }
}
