//! Unadjusted HMC chains and ergodic averages.
//!
//! Every particle of every replica owns a ChaCha8 stream. The key is built
//! from `(seed, replica)` and the ChaCha stream id is the particle index, so
//! the velocity draws of particle `i` never depend on how many other
//! particles exist. Normals come from `rand_distr::StandardNormal` (ziggurat)
//! and uniforms from the generator's `[0, 1)` `f64` sampler; both are pure
//! functions of the stream and reproduce bitwise on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::integrator::{IntegratorConfig, VerletWorkspace};
use crate::model::{PositionState, Potential};
use crate::scalar::Scalar;
use crate::stats::NeumaierSum;

/// Bit set on the stream id of auxiliary (non-particle) streams.
const AUX_STREAM_FLAG: u64 = 1 << 63;

/// Master seed plus replica index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Same seed, another replica.
    pub fn replica(&self, stream: u64) -> Self {
        Self { seed: self.seed, stream }
    }

    fn key(&self) -> [u8; 32] {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        key
    }

    /// The velocity stream of one particle.
    pub fn particle_rng(&self, particle: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(particle as u64);
        rng
    }

    /// A stream disjoint from all particle streams, e.g. for initial states.
    pub fn aux_rng(&self, tag: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(AUX_STREAM_FLAG | tag);
        rng
    }

    pub fn particle_noise(&self, n: usize) -> ParticleNoise {
        ParticleNoise::from_streams((0..n).map(|i| self.particle_rng(i)).collect())
    }
}

/// One random stream per particle.
#[derive(Debug, Clone)]
pub struct ParticleNoise {
    streams: Vec<ChaCha8Rng>,
}

impl ParticleNoise {
    pub fn from_streams(streams: Vec<ChaCha8Rng>) -> Self {
        Self { streams }
    }

    pub fn n(&self) -> usize {
        self.streams.len()
    }

    pub fn into_streams(self) -> Vec<ChaCha8Rng> {
        self.streams
    }

    /// Fills `out` with `d` standard normals from particle `i`'s stream.
    #[inline]
    pub fn normal_particle<S: Scalar>(&mut self, i: usize, out: &mut [S]) {
        let rng = &mut self.streams[i];
        for o in out {
            *o = S::of(rng.sample::<f64, _>(StandardNormal));
        }
    }

    /// Fills a particle-major array with `N(0, I)` draws.
    pub fn fill_normal<S: Scalar>(&mut self, d: usize, out: &mut [S]) {
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.normal_particle(i, chunk);
        }
    }

    #[inline]
    pub fn uniform(&mut self, i: usize) -> f64 {
        self.streams[i].random::<f64>()
    }
}

/// Retained states of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace<S> {
    pub states: Vec<PositionState<S>>,
    /// Index of each retained state in the unthinned chain.
    pub indices: Vec<usize>,
    /// Number of transitions performed.
    pub steps: usize,
    pub thin: usize,
    pub config: IntegratorConfig<S>,
}

/// Reusable buffers for running the unadjusted HMC kernel.
#[derive(Debug, Clone)]
pub struct HmcKernel<S> {
    cfg: IntegratorConfig<S>,
    velocity: Vec<S>,
    ws: VerletWorkspace<S>,
}

impl<S: Scalar> HmcKernel<S> {
    pub fn new<P: Potential<S>>(model: &P, cfg: IntegratorConfig<S>) -> Self {
        let len = model.n() * model.d();
        Self { cfg, velocity: vec![S::zero(); len], ws: VerletWorkspace::new(len) }
    }

    pub fn config(&self) -> &IntegratorConfig<S> {
        &self.cfg
    }

    /// Full velocity refreshment followed by `T/h` Verlet steps, in place.
    pub fn step<P: Potential<S>>(&mut self, model: &P, x: &mut [S], noise: &mut ParticleNoise) {
        noise.fill_normal(model.d(), &mut self.velocity);
        self.ws.flow(model, x, &mut self.velocity, self.cfg.step_size(), self.cfg.steps());
    }

    /// Flow from `x` with a given initial velocity; `velocity` is overwritten
    /// with the final momentum.
    pub(crate) fn flow_with<P: Potential<S>>(&mut self, model: &P, x: &mut [S], velocity: &mut [S]) {
        self.ws.flow(model, x, velocity, self.cfg.step_size(), self.cfg.steps());
    }
}

fn check_noise<S: Scalar, P: Potential<S>>(model: &P, x: &PositionState<S>, noise: &ParticleNoise) -> Result<()> {
    x.check_shape(model.n(), model.d())?;
    if noise.n() != model.n() {
        return Err(Error::DimensionMismatch { expected: model.n(), actual: noise.n() });
    }
    Ok(())
}

/// One unadjusted HMC transition `x ↦ q_T(x, ξ)`, `ξ ∼ N(0, I_{dn})`.
pub fn hmc_step<S: Scalar, P: Potential<S>>(
    model: &P,
    x: &PositionState<S>,
    cfg: &IntegratorConfig<S>,
    noise: &mut ParticleNoise,
) -> Result<PositionState<S>> {
    check_noise(model, x, noise)?;
    let mut kernel = HmcKernel::new(model, *cfg);
    let mut out = x.clone();
    kernel.step(model, out.as_mut_slice(), noise);
    Ok(out)
}

/// Runs `steps` transitions from `x0`, keeping every `thin`-th state; the
/// initial and final states are always kept.
pub fn run_chain<S: Scalar, P: Potential<S>>(
    model: &P,
    x0: &PositionState<S>,
    steps: usize,
    cfg: &IntegratorConfig<S>,
    noise: &mut ParticleNoise,
    thin: usize,
) -> Result<ChainTrace<S>> {
    check_noise(model, x0, noise)?;
    if thin == 0 {
        return Err(invalid("thin", "thinning interval must be at least 1"));
    }
    let mut kernel = HmcKernel::new(model, *cfg);
    let mut x = x0.clone();
    let mut states = vec![x0.clone()];
    let mut indices = vec![0];
    for k in 1..=steps {
        kernel.step(model, x.as_mut_slice(), noise);
        if k % thin == 0 || k == steps {
            states.push(x.clone());
            indices.push(k);
        }
    }
    Ok(ChainTrace { states, indices, steps, thin, config: *cfg })
}

/// Built-in single-particle functions `f̂: ℝᵈ → ℝ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParticleFn {
    Constant(f64),
    /// `p_c²`
    Square(usize),
    /// `|p|²`
    SquaredNorm,
}

impl ParticleFn {
    fn eval<S: Scalar>(&self, p: &[S]) -> f64 {
        match *self {
            Self::Constant(v) => v,
            Self::Square(c) => {
                let v = p[c].to_f64_lossy();
                v * v
            }
            Self::SquaredNorm => p.iter().map(|v| v.to_f64_lossy().powi(2)).sum(),
        }
    }
}

/// Observables `f: ℝ^{dn} → ℝ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Observable {
    /// `(1/n) Σᵢ xⁱ_c`
    IntensiveMean(usize),
    /// `(1/n) Σᵢ f̂(xⁱ)`
    IntensiveFunc(ParticleFn),
    /// `Σᵢ xⁱ_c`
    ExtensiveSum(usize),
}

impl Observable {
    pub fn validate(&self, d: usize) -> Result<()> {
        let coord = match *self {
            Self::IntensiveMean(c) | Self::ExtensiveSum(c) => Some(c),
            Self::IntensiveFunc(ParticleFn::Square(c)) => Some(c),
            Self::IntensiveFunc(_) => None,
        };
        match coord {
            Some(c) if c >= d => Err(invalid("coordinate", format!("coordinate {c} out of range for d = {d}"))),
            _ => Ok(()),
        }
    }

    pub fn eval<S: Scalar>(&self, x: &PositionState<S>) -> f64 {
        self.eval_raw(x.as_slice(), x.d())
    }

    pub(crate) fn eval_raw<S: Scalar>(&self, x: &[S], d: usize) -> f64 {
        let n = (x.len() / d) as f64;
        match *self {
            Self::IntensiveMean(c) => x.chunks_exact(d).map(|p| p[c].to_f64_lossy()).sum::<f64>() / n,
            Self::IntensiveFunc(f) => x.chunks_exact(d).map(|p| f.eval(p)).sum::<f64>() / n,
            Self::ExtensiveSum(c) => x.chunks_exact(d).map(|p| p[c].to_f64_lossy()).sum(),
        }
    }
}

/// `A_{m,b} f = (1/m) Σ_{k=b}^{b+m−1} f(X_k)` over an unthinned trace.
pub fn ergodic_average<S: Scalar>(trace: &ChainTrace<S>, f: &Observable, burn_in: usize, window: usize) -> Result<f64> {
    if trace.thin != 1 {
        return Err(invalid("thin", "ergodic averages need an unthinned trace"));
    }
    if window == 0 {
        return Err(invalid("m", "averaging window must be at least 1"));
    }
    let end = burn_in + window;
    if end > trace.states.len() {
        return Err(Error::WindowExceedsTrace { burn_in, end, len: trace.states.len() });
    }
    if let Some(x) = trace.states.first() {
        f.validate(x.d())?;
    }
    let mut sum = NeumaierSum::default();
    for x in &trace.states[burn_in..end] {
        sum.add(f.eval(x));
    }
    Ok(sum.value() / window as f64)
}

/// Runs a chain from `x0` and returns `A_{m,b} f` without storing states.
pub fn streaming_ergodic_average<S: Scalar, P: Potential<S>>(
    model: &P,
    x0: &PositionState<S>,
    cfg: &IntegratorConfig<S>,
    noise: &mut ParticleNoise,
    f: &Observable,
    burn_in: usize,
    window: usize,
) -> Result<f64> {
    check_noise(model, x0, noise)?;
    f.validate(model.d())?;
    if window == 0 {
        return Err(invalid("m", "averaging window must be at least 1"));
    }
    let mut kernel = HmcKernel::new(model, *cfg);
    let mut x = x0.as_slice().to_vec();
    let mut sum = NeumaierSum::default();
    for k in 0..burn_in + window {
        if k >= burn_in {
            sum.add(f.eval_raw(&x, model.d()));
        }
        if k + 1 < burn_in + window {
            kernel.step(model, &mut x, noise);
        }
    }
    Ok(sum.value() / window as f64)
}

/// Draws a position with i.i.d. `N(mean, sd²)` entries from an auxiliary stream.
pub fn gaussian_position<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, d: usize, mean: f64, sd: f64) -> PositionState<S> {
    let data = (0..n * d)
        .map(|_| S::of(mean + sd * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    PositionState::from_raw(n, d, data)
}

/// Draws a position uniformly from the box `[lo, hi]` in every coordinate.
pub fn uniform_position<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, d: usize, lo: &[f64], hi: &[f64]) -> PositionState<S> {
    let data = (0..n * d)
        .map(|k| {
            let c = k % d;
            S::of(lo[c] + (hi[c] - lo[c]) * rng.random::<f64>())
        })
        .collect();
    PositionState::from_raw(n, d, data)
}
