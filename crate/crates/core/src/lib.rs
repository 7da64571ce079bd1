//! Unadjusted Hamiltonian Monte Carlo for mean-field particle models.
//!
//! The crate provides
//!
//! * [`model`]: confinement and pairwise interaction potentials with
//!   per-particle gradients,
//! * [`integrator`]: velocity Verlet at grid times plus the exact harmonic
//!   flow used as a reference,
//! * [`sampler`]: the unadjusted HMC chain with per-particle random streams
//!   and ergodic averages,
//! * [`coupling`]: the particlewise shift/reflection/synchronous coupling of
//!   two chains,
//! * [`theory`]: contraction constants, the concave metric `ρ` and the
//!   parameter conditions,
//! * [`experiments`]: seeded studies of contraction, integrator order,
//!   ergodic-average bias and coupling marginals.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what the studies use.

pub mod coupling;
pub mod error;
pub mod experiments;
pub mod integrator;
pub mod model;
pub mod sampler;
pub mod scalar;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MeanFieldModel = model::MeanFieldModel<f64>;
pub type ConfinementSpec = model::ConfinementSpec<f64>;
pub type PositionState = model::PositionState<f64>;
pub type PhasePoint = integrator::PhasePoint<f64>;
pub type IntegratorConfig = integrator::IntegratorConfig<f64>;
pub type ChainTrace = sampler::ChainTrace<f64>;
pub type CouplingParams = coupling::CouplingParams<f64>;
pub type CoupledPhase = coupling::CoupledPhase<f64>;
pub type CouplingTrace = coupling::CouplingTrace<f64>;
pub type RegularityParams = theory::RegularityParams<f64>;
pub type DerivedConstants = theory::DerivedConstants<f64>;
pub type ConditionReport = theory::ConditionReport<f64>;

pub use coupling::{Branch, RefreshRule};
pub use model::{FreeParticles, InteractionSign, InteractionSpec, Potential};
pub use sampler::{Observable, ParticleFn, ParticleNoise, RngSpec};
pub use experiments::{ExperimentReport, Execution};
