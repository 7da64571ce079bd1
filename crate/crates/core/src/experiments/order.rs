//! Strong accuracy of velocity Verlet against a fine-step reference.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::error::{invalid, Error, Result};
use crate::integrator::{harmonic_exact_in_place, VerletWorkspace};
use crate::model::{ConfinementSpec, MeanFieldModel};
use crate::sampler::RngSpec;
use crate::scalar::distance;
use crate::stats::{LinearFit, Moments, QuadraticFit};

use super::{fmt_range, tags, Execution, ExperimentReport, Initializer, ModelConfig, Series};

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudyConfig {
    pub model: ModelConfig,
    pub duration: f64,
    /// Verlet step counts `T/h`, strictly increasing.
    pub ladder: Vec<usize>,
    /// `T/h_ref`, at least 64 times the finest ladder entry.
    pub reference_steps: usize,
    pub replicas: usize,
    pub seed: u64,
    pub init: Initializer,
    pub expected_order: (f64, f64),
    /// Also compare against the exact harmonic flow with this stiffness.
    pub harmonic_stiffness: Option<f64>,
    /// Relative tolerance on consecutive harmonic error ratios around 4.
    pub harmonic_tolerance: f64,
    /// Particle counts for the error-versus-n check at the coarsest step.
    pub n_values: Vec<usize>,
    pub execution: Execution,
}

impl OrderStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid("T", "duration must be positive"));
        }
        if self.replicas < 2 {
            return Err(invalid("replicas", "need at least two replicas for a standard error"));
        }
        if self.ladder.len() < 2 || self.ladder[0] == 0 || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ladder", "need at least two strictly decreasing step sizes"));
        }
        let finest = *self.ladder.last().expect("non-empty ladder");
        if self.reference_steps < 64 * finest {
            return Err(invalid("reference_steps", format!("need T/h_ref >= 64 * {finest}")));
        }
        Ok(())
    }
}

fn checksum(values: &[f64]) -> u64 {
    let mut hasher = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut hasher);
    }
    hasher.finish()
}

fn endpoint(model: &MeanFieldModel<f64>, x: &[f64], xi: &[f64], duration: f64, steps: usize) -> Vec<f64> {
    let mut q = x.to_vec();
    let mut p = xi.to_vec();
    let mut ws = VerletWorkspace::new(q.len());
    ws.flow(model, &mut q, &mut p, duration / steps as f64, steps);
    q
}

fn particle_error(a: &[f64], b: &[f64], d: usize) -> f64 {
    a.chunks_exact(d).zip(b.chunks_exact(d)).map(|(p, q)| distance(p, q)).sum()
}

/// Per replica: errors at each ladder level against the reference and the
/// half-step reference, harmonic errors, and the noise checksums seen by
/// each level.
struct ReplicaErrors {
    errors: Vec<f64>,
    refined: f64,
    harmonic: Vec<f64>,
    checksums: Vec<u64>,
}

fn replica_errors(model: &MeanFieldModel<f64>, cfg: &OrderStudyConfig, r: usize) -> Result<ReplicaErrors> {
    let spec = RngSpec::new(cfg.seed, r as u64);
    let x = cfg.init.draw(model, &mut spec.aux_rng(tags::INIT_X))?;
    let mut xi = vec![0.0; model.n() * model.d()];
    spec.particle_noise(model.n()).fill_normal(model.d(), &mut xi);
    let x = x.as_slice();
    let d = model.d();

    let reference = endpoint(model, x, &xi, cfg.duration, cfg.reference_steps);
    let refined_ref = endpoint(model, x, &xi, cfg.duration, 2 * cfg.reference_steps);
    let mut errors = Vec::with_capacity(cfg.ladder.len());
    let mut checksums = Vec::with_capacity(cfg.ladder.len());
    let mut finest = Vec::new();
    for &steps in &cfg.ladder {
        checksums.push(checksum(&xi));
        let q = endpoint(model, x, &xi, cfg.duration, steps);
        errors.push(particle_error(&q, &reference, d));
        finest = q;
    }
    let refined = particle_error(&finest, &refined_ref, d);

    let mut harmonic = Vec::new();
    if let Some(k) = cfg.harmonic_stiffness {
        let osc = MeanFieldModel::product(ConfinementSpec::Quadratic { stiffness: k }, model.n(), d)?;
        let mut exact_q = x.to_vec();
        let mut exact_p = xi.clone();
        harmonic_exact_in_place(k, &mut exact_q, &mut exact_p, cfg.duration);
        for &steps in &cfg.ladder {
            let q = endpoint(&osc, x, &xi, cfg.duration, steps);
            harmonic.push(particle_error(&q, &exact_q, d));
        }
    }
    Ok(ReplicaErrors { errors, refined, harmonic, checksums })
}

fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let m = Moments::of(&v);
    (m.mean, m.std_error())
}

/// Mean endpoint error per step size with common random numbers across the
/// ladder, and the fitted log-log slope.
pub fn order_study(cfg: &OrderStudyConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let model = cfg.model.build(cfg.seed)?;
    let runs = cfg.execution.map(cfg.replicas, |r| replica_errors(&model, cfg, r));
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    for (r, run) in runs.iter().enumerate() {
        if run.checksums.windows(2).any(|w| w[0] != w[1]) {
            return Err(invalid("noise", format!("replica {r} saw different noise across step sizes")));
        }
    }

    let mut report = ExperimentReport::new("order", cfg.seed);
    report.echo("model", cfg.model.describe());
    report.echo("T", cfg.duration);
    report.echo("ladder", format!("{:?}", cfg.ladder));
    report.echo("reference_steps", cfg.reference_steps);
    report.echo("replicas", cfg.replicas);
    report.echo("init", format!("{:?}", cfg.init));

    let hs: Vec<f64> = cfg.ladder.iter().map(|&s| cfg.duration / s as f64).collect();
    let mut series = Series::new("order", &["h", "mean_error", "stderr"]);
    let mut means = Vec::new();
    for (j, &h) in hs.iter().enumerate() {
        let (m, se) = mean_se(runs.iter().map(|run| run.errors[j]));
        means.push(m);
        series.push(vec![h, m, se]);
    }
    report.series.push(series);
    let (lo, hi) = cfg.expected_order;
    match LinearFit::log_log(&hs, &means) {
        Some(fit) if fit.slope.is_finite() => {
            report.estimate("order", fit.slope, fit.slope_se);
            let (a, b) = (fit.slope - 2.0 * fit.slope_se, fit.slope + 2.0 * fit.slope_se);
            report.verdict(
                "order",
                a >= lo && b <= hi,
                format!("slope ± 2*SE within {}", fmt_range(lo, hi)),
                format!("{:.4} ± {:.4}", fit.slope, 2.0 * fit.slope_se),
            );
        }
        _ => report.verdict("order", false, format!("slope within {}", fmt_range(lo, hi)), "no fit"),
    }

    let finest = *means.last().expect("non-empty ladder");
    let (refined, _) = mean_se(runs.iter().map(|run| run.refined));
    let change = if refined > 0.0 { (finest - refined).abs() / refined } else { 0.0 };
    report.estimate("reference_change", change, 0.0);
    report.verdict(
        "reference_stable",
        change <= 0.05,
        "finest error changes by <= 5% when h_ref is halved",
        format!("{:.3}%", 100.0 * change),
    );

    if cfg.harmonic_stiffness.is_some() {
        let mut table = Series::new("harmonic", &["h", "mean_error", "stderr"]);
        let mut errs = Vec::new();
        for (j, &h) in hs.iter().enumerate() {
            let (m, se) = mean_se(runs.iter().map(|run| run.harmonic[j]));
            errs.push(m);
            table.push(vec![h, m, se]);
        }
        let tol = cfg.harmonic_tolerance;
        let mut ok = true;
        let mut ratios = Vec::new();
        for j in 0..errs.len() - 1 {
            if cfg.ladder[j + 1] != 2 * cfg.ladder[j] {
                continue;
            }
            let ratio = errs[j] / errs[j + 1];
            ok &= (ratio - 4.0).abs() <= 4.0 * tol;
            ratios.push(format!("{ratio:.4}"));
        }
        report.verdict(
            "harmonic_halving",
            ok && !ratios.is_empty(),
            format!("error ratio per halving within 4 ± {}%", 100.0 * tol),
            ratios.join(", "),
        );
        report.series.push(table);
    }

    if !cfg.n_values.is_empty() {
        let steps = cfg.ladder[0];
        let mut table = Series::new("n_scaling", &["n", "mean_error", "stderr"]);
        let mut ns = Vec::new();
        let mut errs = Vec::new();
        let mut ses = Vec::new();
        for &n in &cfg.n_values {
            let sub_cfg = OrderStudyConfig {
                model: cfg.model.with_particles(n),
                ladder: vec![steps],
                harmonic_stiffness: None,
                n_values: Vec::new(),
                ..cfg.clone()
            };
            let sub_model = sub_cfg.model.build(cfg.seed)?;
            let errors = cfg.execution.map(cfg.replicas, |r| -> Result<f64> {
                let spec = RngSpec::new(cfg.seed, r as u64);
                let x = sub_cfg.init.draw(&sub_model, &mut spec.aux_rng(tags::INIT_X))?;
                let mut xi = vec![0.0; n * sub_model.d()];
                spec.particle_noise(n).fill_normal(sub_model.d(), &mut xi);
                let reference = endpoint(&sub_model, x.as_slice(), &xi, cfg.duration, cfg.reference_steps);
                let q = endpoint(&sub_model, x.as_slice(), &xi, cfg.duration, steps);
                Ok(particle_error(&q, &reference, sub_model.d()))
            });
            let errors = errors.into_iter().collect::<Result<Vec<_>>>()?;
            let (m, se) = mean_se(errors.into_iter());
            ns.push(n as f64);
            errs.push(m);
            ses.push(se);
            table.push(vec![n as f64, m, se]);
        }
        if let Some(fit) = LinearFit::log_log(&ns, &errs) {
            report.estimate("n_exponent", fit.slope, fit.slope_se);
        }
        // superlinear growth shows up as positive curvature of the error in n
        match QuadraticFit::weighted(&ns, &errs, &ses) {
            Some(fit) => {
                let (c, c_se) = (fit.coefficients[2], fit.standard_errors[2]);
                report.estimate("n_linear_coefficient", fit.coefficients[1], fit.standard_errors[1]);
                report.estimate("n_curvature", c, c_se);
                report.verdict(
                    "n_scaling",
                    c - 2.0 * c_se <= 0.0,
                    "curvature of error in n minus 2*SE <= 0",
                    format!("{c:.4e} ± {:.4e}", 2.0 * c_se),
                );
            }
            None => return Err(Error::InvalidParameter { name: "n_values", reason: "need three distinct counts with nonzero spread".into() }),
        }
        report.series.push(table);
    }
    Ok(report)
}
