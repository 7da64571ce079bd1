//! Run configuration.
//!
//! A config file is TOML restricted to a fixed schema: an optional top-level
//! `seed` and the tables listed in [`SCHEMA`]. Unknown tables and keys are
//! errors, and every error names the offending `table.key` and, when it
//! appears in the file, its line.

use std::fmt;
use std::path::Path;

use mfhmc::coupling::RefreshRule;
use mfhmc::experiments::{BiasReference, ConfinementConfig, Initializer, ModelConfig};
use mfhmc::theory::derive_constants;
use mfhmc::{CouplingParams, IntegratorConfig, InteractionSign, InteractionSpec, Observable, ParticleFn, RegularityParams};
use sha2::{Digest, Sha256};
use toml_edit::{Document, Item, Table, Value};

/// Allowed keys per table.
pub const SCHEMA: &[(&str, &[&str])] = &[
    (
        "model",
        &["confinement", "stiffness", "means", "mixture_count", "mixture_low", "mixture_high", "a", "b", "interaction", "epsilon", "n", "d"],
    ),
    ("integrator", &["T", "steps", "h"]),
    ("coupling", &["gamma", "r_tilde", "tol", "max_steps", "rule"]),
    ("regularity", &["K", "L", "L_tilde", "R", "epsilon", "h1"]),
    ("init", &["kind", "mean", "sd", "low", "high", "point"]),
    ("sample", &["steps", "thin", "burn_in", "window", "observable"]),
    ("couple", &["replicas", "min_converged_fraction", "n_values", "replicas_per_n", "rate_factor"]),
    (
        "order",
        &["ladder", "reference_steps", "replicas", "expected_order", "harmonic_stiffness", "harmonic_tolerance", "n_values"],
    ),
    (
        "bias",
        &["ladder", "burn_in", "window", "replicas", "observable", "target", "reference", "n_values", "expected_order", "noise_budget"],
    ),
    ("contraction_check", &["x", "y", "draws"]),
    ("marginal", &["x", "y", "draws"]),
];

const ROOT_KEYS: &[&str] = &["seed"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// `table.key`, or `config` for file-level problems.
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "`{}` (line {line}): {}", self.key, self.message),
            None => write!(f, "`{}`: {}", self.key, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = Result<T, ConfigError>;

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    text: String,
    doc: Document<String>,
    hash: String,
}

impl RunConfig {
    pub fn load(path: &Path) -> ConfigResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            key: "config".into(),
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(text)
    }

    pub fn parse(text: String) -> ConfigResult<Self> {
        let doc = Document::parse(text.clone()).map_err(|e| ConfigError {
            key: "config".into(),
            line: e.span().map(|s| line_of(&text, s.start)),
            message: e.message().trim().to_string(),
        })?;
        let hash = Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        let cfg = Self { text, doc, hash };
        cfg.check_schema()?;
        Ok(cfg)
    }

    fn check_schema(&self) -> ConfigResult<()> {
        let root = self.doc.as_table();
        for (name, item) in root.iter() {
            let line = self.key_line(root, name);
            match item {
                Item::Table(table) => {
                    let Some((_, allowed)) = SCHEMA.iter().find(|(s, _)| *s == name) else {
                        return Err(ConfigError { key: name.to_string(), line, message: "unknown table".into() });
                    };
                    for (key, _) in table.iter() {
                        if !allowed.contains(&key) {
                            return Err(ConfigError {
                                key: format!("{name}.{key}"),
                                line: self.key_line(table, key),
                                message: format!("unknown key; allowed: {}", allowed.join(", ")),
                            });
                        }
                    }
                }
                Item::Value(_) if ROOT_KEYS.contains(&name) => {}
                _ => return Err(ConfigError { key: name.to_string(), line, message: "unknown top-level key".into() }),
            }
        }
        Ok(())
    }

    fn key_line(&self, table: &Table, key: &str) -> Option<usize> {
        let (k, item) = table.get_key_value(key)?;
        k.span().or_else(|| item.span()).map(|s| line_of(&self.text, s.start))
    }

    /// SHA-256 of the file contents, hex encoded.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn seed(&self) -> ConfigResult<Option<u64>> {
        let root = Section { name: "", table: Some(self.doc.as_table()), cfg: self };
        root.u64("seed")
    }

    /// The named table; an absent table reads as empty.
    pub fn section(&self, name: &'static str) -> Section<'_> {
        let table = self.doc.as_table().get(name).and_then(Item::as_table);
        Section { name, table, cfg: self }
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.doc.as_table().get(name).is_some_and(Item::is_table)
    }

    pub fn model(&self) -> ConfigResult<ModelConfig> {
        let s = self.section("model");
        let kind = s.req_str("confinement")?;
        let (n, d) = self.dims()?;
        let confinement = match kind {
            "quadratic" => {
                s.forbid(&["means", "mixture_count", "mixture_low", "mixture_high", "a", "b"], "confinement = \"quadratic\"")?;
                ConfinementConfig::Quadratic { stiffness: s.positive("stiffness")?.unwrap_or(1.0) }
            }
            "mixture" => {
                s.forbid(&["stiffness", "a", "b"], "confinement = \"mixture\"")?;
                match s.f64_matrix("means")? {
                    Some(means) => {
                        s.forbid(&["mixture_count", "mixture_low", "mixture_high"], "explicit means")?;
                        if means.is_empty() || means.iter().any(|m| m.len() != d) {
                            return Err(s.err("means", format!("need at least one mean, each of length d = {d}")));
                        }
                        ConfinementConfig::Mixture { means }
                    }
                    None => {
                        let count = s.req_usize("mixture_count")?;
                        let lo = s.f64("mixture_low")?.unwrap_or(0.0);
                        let hi = s.f64("mixture_high")?.unwrap_or(10.0);
                        if count == 0 {
                            return Err(s.err("mixture_count", "must be at least 1"));
                        }
                        if !(hi > lo) {
                            return Err(s.err("mixture_high", "must exceed mixture_low"));
                        }
                        ConfinementConfig::RandomMixture { count, lo, hi }
                    }
                }
            }
            "rosenbrock" => {
                s.forbid(&["stiffness", "means", "mixture_count", "mixture_low", "mixture_high"], "confinement = \"rosenbrock\"")?;
                if d != 2 {
                    return Err(s.err("d", "the Rosenbrock confinement needs d = 2"));
                }
                ConfinementConfig::Rosenbrock { a: s.f64("a")?.unwrap_or(1.0), b: s.positive("b")?.unwrap_or(100.0) }
            }
            other => {
                return Err(s.err("confinement", format!("unknown confinement `{other}`; expected quadratic, mixture or rosenbrock")))
            }
        };
        let interaction = match s.str("interaction")?.unwrap_or("zero") {
            "zero" => InteractionSpec::Zero,
            "attractive" => InteractionSpec::Quadratic { sign: InteractionSign::Attractive },
            "repulsive" => InteractionSpec::Quadratic { sign: InteractionSign::Repulsive },
            other => return Err(s.err("interaction", format!("unknown interaction `{other}`; expected zero, attractive or repulsive"))),
        };
        let epsilon = s.f64("epsilon")?.unwrap_or(0.0);
        if !epsilon.is_finite() {
            return Err(s.err("epsilon", "must be finite"));
        }
        Ok(ModelConfig { confinement, interaction, epsilon, n, d })
    }

    /// `(model.n, model.d)`
    pub fn dims(&self) -> ConfigResult<(usize, usize)> {
        let s = self.section("model");
        let n = s.req_usize("n")?;
        let d = s.req_usize("d")?;
        if n == 0 {
            return Err(s.err("n", "must be at least 1"));
        }
        if d == 0 {
            return Err(s.err("d", "must be at least 1"));
        }
        Ok((n, d))
    }

    /// `integrator.T`
    pub fn duration(&self) -> ConfigResult<f64> {
        let s = self.section("integrator");
        match s.positive("T")? {
            Some(t) => Ok(t),
            None => Err(s.missing("T")),
        }
    }

    /// Step count from `integrator.steps` or `integrator.h`, if either is given.
    pub fn steps(&self) -> ConfigResult<Option<usize>> {
        let s = self.section("integrator");
        match (s.usize("steps")?, s.positive("h")?) {
            (Some(_), Some(_)) => Err(s.err("h", "give either steps or h, not both")),
            (Some(0), None) => Err(s.err("steps", "must be at least 1")),
            (Some(steps), None) => Ok(Some(steps)),
            (None, Some(h)) => {
                let ratio = self.duration()? / h;
                let steps = ratio.round();
                if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio {
                    return Err(s.err("h", "T must be an integer multiple of h"));
                }
                Ok(Some(steps as usize))
            }
            (None, None) => Ok(None),
        }
    }

    pub fn integrator(&self) -> ConfigResult<IntegratorConfig> {
        let t = self.duration()?;
        let steps = self.steps()?.ok_or_else(|| self.section("integrator").missing("steps"))?;
        IntegratorConfig::new(t, steps).map_err(|e| self.section("integrator").err("steps", e.to_string()))
    }

    /// `ε` defaults to `model.epsilon` when the model table gives one.
    pub fn regularity(&self) -> ConfigResult<RegularityParams> {
        let s = self.section("regularity");
        let k = s.positive("K")?.ok_or_else(|| s.missing("K"))?;
        let l = s.positive("L")?.ok_or_else(|| s.missing("L"))?;
        let l_tilde = s.non_negative("L_tilde")?.unwrap_or(0.0);
        let r = s.non_negative("R")?.unwrap_or(0.0);
        let epsilon = match s.non_negative("epsilon")? {
            Some(e) => e,
            None => self.section("model").f64("epsilon")?.unwrap_or(0.0).abs(),
        };
        RegularityParams::new(k, l, l_tilde, r, epsilon).map_err(|e| s.err("K", e.to_string()))
    }

    /// `γ` and `R̃` come from `[coupling]`, falling back to the constants
    /// derived from `[regularity]` at duration `T`.
    pub fn coupling(&self, duration: Option<f64>) -> ConfigResult<CouplingParams> {
        let s = self.section("coupling");
        let derived = match duration {
            Some(t) if self.has_section("regularity") => {
                let reg = self.regularity()?;
                Some(derive_constants(&reg, t).map_err(|e| self.section("regularity").err("K", e.to_string()))?)
            }
            _ => None,
        };
        let gamma = match (s.positive("gamma")?, &derived) {
            (Some(g), _) => g,
            (None, Some(dc)) => dc.gamma,
            (None, None) => return Err(s.missing("gamma")),
        };
        let r_tilde = match (s.non_negative("r_tilde")?, &derived) {
            (Some(r), _) => r,
            (None, Some(dc)) => dc.r_tilde,
            (None, None) => return Err(s.missing("r_tilde")),
        };
        let tol = s.positive("tol")?.unwrap_or(1e-5);
        let max_steps = s.usize("max_steps")?.unwrap_or(1000);
        let rule = match s.str("rule")?.unwrap_or("particlewise") {
            "particlewise" => RefreshRule::Particlewise,
            "without_reflection" => RefreshRule::WithoutReflection,
            other => return Err(s.err("rule", format!("unknown rule `{other}`; expected particlewise or without_reflection"))),
        };
        let mut params = CouplingParams::new(gamma, r_tilde, tol, max_steps).map_err(|e| s.err("gamma", e.to_string()))?;
        params.rule = rule;
        Ok(params)
    }

    pub fn init(&self) -> ConfigResult<Initializer> {
        let s = self.section("init");
        match s.str("kind")?.unwrap_or("mixture_box") {
            "mixture_box" => {
                s.forbid(&["mean", "sd", "low", "high", "point"], "kind = \"mixture_box\"")?;
                Ok(Initializer::MixtureBox)
            }
            "gaussian" => {
                s.forbid(&["low", "high", "point"], "kind = \"gaussian\"")?;
                Ok(Initializer::Gaussian { mean: s.f64("mean")?.unwrap_or(0.0), sd: s.positive("sd")?.unwrap_or(1.0) })
            }
            "uniform" => {
                s.forbid(&["mean", "sd", "point"], "kind = \"uniform\"")?;
                let lo = s.req_f64("low")?;
                let hi = s.req_f64("high")?;
                if !(hi > lo) {
                    return Err(s.err("high", "must exceed low"));
                }
                Ok(Initializer::Uniform { lo, hi })
            }
            "fixed" => {
                s.forbid(&["mean", "sd", "low", "high"], "kind = \"fixed\"")?;
                let point = s.f64_list("point")?.ok_or_else(|| s.missing("point"))?;
                let (n, d) = self.dims()?;
                if point.len() != d && point.len() != n * d {
                    return Err(s.err("point", format!("need d = {d} or n*d = {} values", n * d)));
                }
                Ok(Initializer::Fixed(point))
            }
            other => Err(s.err("kind", format!("unknown initializer `{other}`; expected mixture_box, gaussian, uniform or fixed"))),
        }
    }
}

/// Typed read access to one table.
#[derive(Debug, Clone, Copy)]
pub struct Section<'a> {
    name: &'static str,
    table: Option<&'a Table>,
    cfg: &'a RunConfig,
}

impl<'a> Section<'a> {
    fn full(&self, key: &str) -> String {
        if self.name.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.name)
        }
    }

    pub fn has(&self, key: &str) -> bool {
        self.table.is_some_and(|t| t.contains_key(key))
    }

    pub fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        let line = self.table.and_then(|t| self.cfg.key_line(t, key));
        ConfigError { key: self.full(key), line, message: message.into() }
    }

    pub fn missing(&self, key: &str) -> ConfigError {
        let line = self.table.and_then(|t| t.span()).map(|s| line_of(&self.cfg.text, s.start));
        let message = match line {
            Some(_) => "missing required key in this table".to_string(),
            None => "missing required key".to_string(),
        };
        ConfigError { key: self.full(key), line, message }
    }

    /// Errors if any of `keys` is present.
    pub fn forbid(&self, keys: &[&str], context: &str) -> ConfigResult<()> {
        match keys.iter().find(|k| self.has(k)) {
            Some(k) => Err(self.err(k, format!("does not apply with {context}"))),
            None => Ok(()),
        }
    }

    fn value(&self, key: &str) -> Option<&'a Value> {
        self.table?.get(key)?.as_value()
    }

    fn number(&self, key: &str, v: &Value) -> ConfigResult<f64> {
        match v {
            Value::Float(f) => Ok(*f.value()),
            Value::Integer(i) => Ok(*i.value() as f64),
            _ => Err(self.err(key, "expected a number")),
        }
    }

    fn count(&self, key: &str, v: &Value) -> ConfigResult<u64> {
        match v.as_integer() {
            Some(i) if i >= 0 => Ok(i as u64),
            _ => Err(self.err(key, "expected a non-negative integer")),
        }
    }

    pub fn f64(&self, key: &str) -> ConfigResult<Option<f64>> {
        self.value(key).map(|v| self.number(key, v)).transpose()
    }

    pub fn req_f64(&self, key: &str) -> ConfigResult<f64> {
        self.f64(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn positive(&self, key: &str) -> ConfigResult<Option<f64>> {
        match self.f64(key)? {
            Some(v) if !(v > 0.0) => Err(self.err(key, "must be positive")),
            v => Ok(v),
        }
    }

    /// `inf` is accepted.
    pub fn non_negative(&self, key: &str) -> ConfigResult<Option<f64>> {
        match self.f64(key)? {
            Some(v) if !(v >= 0.0) => Err(self.err(key, "must be non-negative")),
            v => Ok(v),
        }
    }

    pub fn u64(&self, key: &str) -> ConfigResult<Option<u64>> {
        self.value(key).map(|v| self.count(key, v)).transpose()
    }

    pub fn usize(&self, key: &str) -> ConfigResult<Option<usize>> {
        Ok(self.u64(key)?.map(|v| v as usize))
    }

    pub fn req_usize(&self, key: &str) -> ConfigResult<usize> {
        self.usize(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn str(&self, key: &str) -> ConfigResult<Option<&'a str>> {
        match self.value(key) {
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.err(key, "expected a string")),
            None => Ok(None),
        }
    }

    pub fn req_str(&self, key: &str) -> ConfigResult<&'a str> {
        self.str(key)?.ok_or_else(|| self.missing(key))
    }

    pub fn f64_list(&self, key: &str) -> ConfigResult<Option<Vec<f64>>> {
        let Some(v) = self.value(key) else { return Ok(None) };
        let array = v.as_array().ok_or_else(|| self.err(key, "expected an array of numbers"))?;
        array.iter().map(|x| self.number(key, x)).collect::<ConfigResult<Vec<_>>>().map(Some)
    }

    pub fn usize_list(&self, key: &str) -> ConfigResult<Option<Vec<usize>>> {
        let Some(v) = self.value(key) else { return Ok(None) };
        let array = v.as_array().ok_or_else(|| self.err(key, "expected an array of integers"))?;
        array.iter().map(|x| self.count(key, x).map(|c| c as usize)).collect::<ConfigResult<Vec<_>>>().map(Some)
    }

    pub fn f64_matrix(&self, key: &str) -> ConfigResult<Option<Vec<Vec<f64>>>> {
        let Some(v) = self.value(key) else { return Ok(None) };
        let bad = || self.err(key, "expected an array of arrays of numbers");
        let rows = v.as_array().ok_or_else(bad)?;
        rows.iter()
            .map(|row| {
                let row = row.as_array().ok_or_else(bad)?;
                row.iter().map(|x| self.number(key, x)).collect::<ConfigResult<Vec<_>>>()
            })
            .collect::<ConfigResult<Vec<_>>>()
            .map(Some)
    }

    /// A `[lo, hi]` pair with `lo < hi`.
    pub fn range(&self, key: &str) -> ConfigResult<Option<(f64, f64)>> {
        match self.f64_list(key)? {
            Some(v) if v.len() == 2 && v[0] < v[1] => Ok(Some((v[0], v[1]))),
            Some(_) => Err(self.err(key, "expected [lo, hi] with lo < hi")),
            None => Ok(None),
        }
    }

    /// `d` values broadcast to every particle, or all `n·d` values.
    pub fn positions(&self, key: &str, n: usize, d: usize) -> ConfigResult<mfhmc::PositionState> {
        let values = self.f64_list(key)?.ok_or_else(|| self.missing(key))?;
        let flat = if values.len() == d {
            values.iter().copied().cycle().take(n * d).collect()
        } else if values.len() == n * d {
            values
        } else {
            return Err(self.err(key, format!("need d = {d} or n*d = {} values", n * d)));
        };
        mfhmc::PositionState::new(n, d, flat).map_err(|e| self.err(key, e.to_string()))
    }

    /// `intensive_mean:<c>`, `extensive_sum:<c>`, `square:<c>`,
    /// `squared_norm` or `constant:<v>`.
    pub fn observable(&self, key: &str) -> ConfigResult<Option<Observable>> {
        let Some(spec) = self.str(key)? else { return Ok(None) };
        let bad = || self.err(key, format!("cannot parse observable `{spec}`"));
        let (kind, arg) = spec.split_once(':').map_or((spec, None), |(k, a)| (k, Some(a.trim())));
        let coord = || arg.and_then(|a| a.parse::<usize>().ok()).ok_or_else(bad);
        let obs = match kind.trim() {
            "intensive_mean" => Observable::IntensiveMean(coord()?),
            "extensive_sum" => Observable::ExtensiveSum(coord()?),
            "square" => Observable::IntensiveFunc(ParticleFn::Square(coord()?)),
            "squared_norm" if arg.is_none() => Observable::IntensiveFunc(ParticleFn::SquaredNorm),
            "constant" => Observable::IntensiveFunc(ParticleFn::Constant(arg.and_then(|a| a.parse().ok()).ok_or_else(bad)?)),
            _ => return Err(bad()),
        };
        Ok(Some(obs))
    }

    /// `target`, `exact_harmonic` or `fine:<steps>`.
    pub fn reference(&self, key: &str) -> ConfigResult<Option<BiasReference>> {
        let Some(spec) = self.str(key)? else { return Ok(None) };
        let reference = match spec.split_once(':') {
            None if spec == "target" => BiasReference::Target,
            None if spec == "exact_harmonic" => BiasReference::ExactHarmonic,
            Some(("fine", steps)) => match steps.trim().parse::<usize>() {
                Ok(steps) if steps > 0 => BiasReference::FineVerlet { steps },
                _ => return Err(self.err(key, "fine reference needs a positive step count")),
            },
            _ => return Err(self.err(key, format!("unknown reference `{spec}`; expected target, exact_harmonic or fine:<steps>"))),
        };
        Ok(Some(reference))
    }
}
