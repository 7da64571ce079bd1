//! Seeded studies built on the sampler and coupling.
//!
//! Every study is a pure function of its configuration and seed. Replica `r`
//! draws from `RngSpec::new(seed, r)`, results are collected by replica index
//! and reduced in that order, so the thread count never changes a number.

use std::fmt::Write as _;

use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::model::{ConfinementSpec, InteractionSpec, MeanFieldModel, PositionState};
use crate::sampler::{gaussian_position, uniform_position, RngSpec};

mod bias;
mod contraction;
mod marginal;
mod order;
mod theorem;

pub use bias::{bias_study, BiasReference, BiasStudyConfig};
pub use contraction::{
    contraction_experiment, dimension_sweep, interaction_sweep, ContractionConfig, InteractionCase,
};
pub use marginal::{marginal_check, MarginalCheckConfig};
pub use order::{order_study, OrderStudyConfig};
pub use theorem::{contraction_theorem_check, TheoremCheckConfig};

/// Tags of the auxiliary streams drawn from `RngSpec::aux_rng`.
pub mod tags {
    pub const MIXTURE_MEANS: u64 = 1;
    pub const INIT_X: u64 = 2;
    pub const INIT_Y: u64 = 3;
}

/// Replica scheduling. `threads == 1` runs everything on the caller's
/// thread; `0` lets rayon pick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub threads: usize,
}

impl Default for Execution {
    fn default() -> Self {
        Self { threads: 1 }
    }
}

impl Execution {
    pub fn sequential() -> Self {
        Self { threads: 1 }
    }

    pub fn parallel(threads: usize) -> Self {
        Self { threads }
    }

    /// `f(0), …, f(count − 1)` in index order.
    pub fn map<T, F>(&self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        if self.threads == 1 {
            return (0..count).map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(self.threads).build() {
            Ok(pool) => pool.install(|| (0..count).into_par_iter().map(&f).collect()),
            Err(_) => (0..count).map(f).collect(),
        }
    }
}

/// Confinement description; mixtures may be drawn from the experiment seed.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfinementConfig {
    Quadratic { stiffness: f64 },
    Mixture { means: Vec<Vec<f64>> },
    /// `count` means drawn uniformly from `[lo, hi]^d`.
    RandomMixture { count: usize, lo: f64, hi: f64 },
    Rosenbrock { a: f64, b: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub confinement: ConfinementConfig,
    pub interaction: InteractionSpec,
    pub epsilon: f64,
    pub n: usize,
    pub d: usize,
}

impl ModelConfig {
    pub fn build(&self, seed: u64) -> Result<MeanFieldModel<f64>> {
        let confinement = match &self.confinement {
            ConfinementConfig::Quadratic { stiffness } => ConfinementSpec::Quadratic { stiffness: *stiffness },
            ConfinementConfig::Mixture { means } => ConfinementSpec::GaussianMixture { means: means.clone() },
            ConfinementConfig::RandomMixture { count, lo, hi } => {
                if *count == 0 || !(hi > lo) {
                    return Err(invalid("mixture", "need count ≥ 1 and lo < hi"));
                }
                ConfinementSpec::GaussianMixture { means: random_means(seed, *count, self.d, *lo, *hi) }
            }
            ConfinementConfig::Rosenbrock { a, b } => ConfinementSpec::Rosenbrock { a: *a, b: *b },
        };
        MeanFieldModel::new(confinement, self.interaction, self.epsilon, self.n, self.d)
    }

    pub fn with_particles(&self, n: usize) -> Self {
        Self { n, ..self.clone() }
    }

    pub fn with_interaction(&self, interaction: InteractionSpec, epsilon: f64) -> Self {
        Self { interaction, epsilon, ..self.clone() }
    }

    /// `Some(k)` when the model is `n` independent harmonic oscillators.
    pub fn harmonic_stiffness(&self) -> Option<f64> {
        match self.confinement {
            ConfinementConfig::Quadratic { stiffness }
                if self.epsilon == 0.0 || self.interaction == InteractionSpec::Zero =>
            {
                Some(stiffness)
            }
            _ => None,
        }
    }

    pub fn describe(&self) -> String {
        let v = match &self.confinement {
            ConfinementConfig::Quadratic { stiffness } => format!("quadratic(k={stiffness})"),
            ConfinementConfig::Mixture { means } => format!("mixture({} means)", means.len()),
            ConfinementConfig::RandomMixture { count, lo, hi } => format!("mixture({count} means in [{lo},{hi}])"),
            ConfinementConfig::Rosenbrock { a, b } => format!("rosenbrock(a={a},b={b})"),
        };
        let w = match self.interaction {
            InteractionSpec::Zero => "zero".to_string(),
            InteractionSpec::Quadratic { sign } => format!("quadratic({sign:?})").to_lowercase(),
        };
        format!("V={v} W={w} epsilon={} n={} d={}", self.epsilon, self.n, self.d)
    }
}

/// Means of a seeded random mixture, drawn from a dedicated stream.
pub fn random_means(seed: u64, count: usize, d: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let mut rng = RngSpec::new(seed, 0).aux_rng(tags::MIXTURE_MEANS);
    let lo_v = vec![lo; d];
    let hi_v = vec![hi; d];
    let flat: PositionState<f64> = uniform_position(&mut rng, count, d, &lo_v, &hi_v);
    flat.particles().map(<[f64]>::to_vec).collect()
}

/// How starting positions are drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum Initializer {
    /// Uniform over the bounding box of the mixture means (falls back to
    /// `N(0, 25·I)` for other confinements).
    MixtureBox,
    Gaussian { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Fixed(Vec<f64>),
}

impl Initializer {
    pub fn draw(&self, model: &MeanFieldModel<f64>, rng: &mut ChaCha8Rng) -> Result<PositionState<f64>> {
        let (n, d) = (model.n(), model.d());
        match self {
            Self::MixtureBox => match model.confinement() {
                ConfinementSpec::GaussianMixture { means } => {
                    let mut lo = vec![f64::INFINITY; d];
                    let mut hi = vec![f64::NEG_INFINITY; d];
                    for mu in means {
                        for c in 0..d {
                            lo[c] = lo[c].min(mu[c]);
                            hi[c] = hi[c].max(mu[c]);
                        }
                    }
                    Ok(uniform_position(rng, n, d, &lo, &hi))
                }
                _ => Ok(gaussian_position(rng, n, d, 0.0, 5.0)),
            },
            Self::Gaussian { mean, sd } => Ok(gaussian_position(rng, n, d, *mean, *sd)),
            Self::Uniform { lo, hi } => Ok(uniform_position(rng, n, d, &vec![*lo; d], &vec![*hi; d])),
            Self::Fixed(values) => {
                // a single particle's value is broadcast to every particle
                if values.len() == d {
                    PositionState::new(n, d, values.iter().copied().cycle().take(n * d).collect())
                } else {
                    PositionState::new(n, d, values.clone())
                }
            }
        }
    }
}

/// A named table of numbers; the first column is the abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

/// A fitted or estimated quantity with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    pub stderr: f64,
}

/// A pass/fail decision and the threshold it was made against.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub threshold: String,
    pub observed: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub study: String,
    pub seed: u64,
    /// Echo of the configuration as `key = value` pairs.
    pub config: Vec<(String, String)>,
    pub series: Vec<Series>,
    pub estimates: Vec<Estimate>,
    pub verdicts: Vec<Verdict>,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn new(study: &str, seed: u64) -> Self {
        Self {
            study: study.to_string(),
            seed,
            config: Vec::new(),
            series: Vec::new(),
            estimates: Vec::new(),
            verdicts: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn echo(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn estimate(&mut self, name: &str, value: f64, stderr: f64) {
        self.estimates.push(Estimate { name: name.to_string(), value, stderr });
    }

    pub fn verdict(&mut self, name: &str, pass: bool, threshold: impl Into<String>, observed: impl Into<String>) {
        self.verdicts.push(Verdict { name: name.to_string(), pass, threshold: threshold.into(), observed: observed.into() });
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// True when every verdict passed (vacuously true without verdicts).
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn get_estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn get_verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    pub fn get_series(&self, name: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.name == name)
    }

    /// Absorbs another report's series, estimates and verdicts, prefixing
    /// their names.
    pub fn absorb(&mut self, prefix: &str, other: ExperimentReport) {
        for mut s in other.series {
            s.name = format!("{prefix}{}", s.name);
            self.series.push(s);
        }
        for mut e in other.estimates {
            e.name = format!("{prefix}{}", e.name);
            self.estimates.push(e);
        }
        for mut v in other.verdicts {
            v.name = format!("{prefix}{}", v.name);
            self.verdicts.push(v);
        }
        self.notes.extend(other.notes.into_iter().map(|n| format!("{prefix}{n}")));
    }

    /// Human-readable summary block.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "== {} (seed {}) ==", self.study, self.seed);
        let width = self.config.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &self.config {
            let _ = writeln!(out, "  {k:<width$}  {v}");
        }
        for e in &self.estimates {
            let _ = writeln!(out, "  {:<28} {:>14.6e} ± {:.3e}", e.name, e.value, e.stderr);
        }
        for v in &self.verdicts {
            let tag = if v.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "  [{tag}] {:<24} observed {} (threshold: {})", v.name, v.observed, v.threshold);
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        let _ = writeln!(out, "  verdict: {}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

pub(crate) fn fmt_range(lo: f64, hi: f64) -> String {
    format!("[{lo}, {hi}]")
}
