//! Decay of the mean distance between coupled chains.

use crate::coupling::{CoupledKernel, CoupledPhase, CouplingParams};
use crate::error::{invalid, Result};
use crate::integrator::IntegratorConfig;
use crate::model::{InteractionSign, InteractionSpec, MeanFieldModel};
use crate::sampler::RngSpec;
use crate::stats::{compensated_sum, LinearFit};
use crate::theory::mean_ell1_distance;

use super::{tags, Execution, ExperimentReport, Initializer, ModelConfig, Series};

/// Replicas stop once their mean distance is this fraction of `tol`; the
/// remaining steps repeat the last value.
const STOP_FRACTION: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionConfig {
    pub model: ModelConfig,
    pub integrator: IntegratorConfig<f64>,
    /// `tol` is the convergence threshold and `max_steps` the horizon.
    pub coupling: CouplingParams<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub init: Initializer,
    /// Fraction of replicas that must converge for the run to count as
    /// converged.
    pub min_converged_fraction: f64,
    pub execution: Execution,
}

impl ContractionConfig {
    pub fn validate(&self) -> Result<()> {
        self.coupling.validate()?;
        if self.replicas == 0 {
            return Err(invalid("replicas", "need at least one replica"));
        }
        if !(0.0..=1.0).contains(&self.min_converged_fraction) {
            return Err(invalid("min_converged_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

struct ReplicaRun {
    distances: Vec<f64>,
    converged_at: Option<usize>,
    diverged: bool,
}

fn run_replica(model: &MeanFieldModel<f64>, cfg: &ContractionConfig, r: usize) -> Result<ReplicaRun> {
    let spec = RngSpec::new(cfg.seed, r as u64);
    let x0 = cfg.init.draw(model, &mut spec.aux_rng(tags::INIT_X))?;
    let y0 = cfg.init.draw(model, &mut spec.aux_rng(tags::INIT_Y))?;
    let mut noise = spec.particle_noise(model.n());
    let mut phase = CoupledPhase::new(x0, y0)?;
    let mut kernel = CoupledKernel::new(model, cfg.integrator, cfg.coupling);

    let horizon = cfg.coupling.max_steps;
    let tol = cfg.coupling.tol;
    let mut distances = Vec::with_capacity(horizon + 1);
    let mut dist = mean_ell1_distance(&phase.x, &phase.y)?;
    distances.push(dist);
    let mut converged_at = (dist < tol).then_some(0);
    let mut diverged = false;
    for k in 1..=horizon {
        if dist < tol * STOP_FRACTION || diverged {
            distances.push(dist);
            continue;
        }
        kernel.step(model, &mut phase, &mut noise);
        dist = mean_ell1_distance(&phase.x, &phase.y)?;
        if !dist.is_finite() {
            dist = f64::INFINITY;
            diverged = true;
        }
        if converged_at.is_none() && dist < tol {
            converged_at = Some(k);
        }
        distances.push(dist);
    }
    Ok(ReplicaRun { distances, converged_at, diverged })
}

/// Fits `ln D_k = a − λk` from the first step with `D_k ≤ D_0/2` up to the
/// last step before `D_k` leaves `[tol, ∞)`.
fn fit_window(avg: &[f64], tol: f64) -> Option<(usize, usize, LinearFit)> {
    let d0 = *avg.first()?;
    let start = avg.iter().position(|&v| v <= d0 / 2.0)?;
    let mut end = start;
    while end < avg.len() && avg[end].is_finite() && avg[end] >= tol && avg[end] > 0.0 {
        end += 1;
    }
    if end - start < 3 {
        return None;
    }
    let xs: Vec<f64> = (start..end).map(|k| k as f64).collect();
    let ys: Vec<f64> = avg[start..end].iter().map(|v| v.ln()).collect();
    LinearFit::fit(&xs, &ys).map(|fit| (start, end - 1, fit))
}

/// Runs `replicas` coupled chains from overdispersed starts and fits the
/// decay rate of the replica-averaged mean distance.
pub fn contraction_experiment(cfg: &ContractionConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let model = cfg.model.build(cfg.seed)?;
    let runs = cfg.execution.map(cfg.replicas, |r| run_replica(&model, cfg, r));
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let horizon = cfg.coupling.max_steps;
    let reps = cfg.replicas as f64;
    let mut series = Series::new("mean_distance", &["step", "mean_distance", "converged_fraction"]);
    let mut avg = Vec::with_capacity(horizon + 1);
    for k in 0..=horizon {
        let mean = compensated_sum(runs.iter().map(|run| run.distances[k])) / reps;
        let done = runs.iter().filter(|run| run.converged_at.is_some_and(|c| c <= k)).count() as f64 / reps;
        avg.push(mean);
        series.push(vec![k as f64, mean, done]);
    }

    let mut report = ExperimentReport::new("contraction", cfg.seed);
    report.echo("model", cfg.model.describe());
    report.echo("T", cfg.integrator.duration());
    report.echo("h", cfg.integrator.step_size());
    report.echo("gamma", cfg.coupling.gamma);
    report.echo("r_tilde", cfg.coupling.r_tilde);
    report.echo("tol", cfg.coupling.tol);
    report.echo("max_steps", horizon);
    report.echo("replicas", cfg.replicas);
    report.echo("init", format!("{:?}", cfg.init));
    report.echo("fit_window", "first step with D <= D0/2 until D < tol");

    let converged = runs.iter().filter(|run| run.converged_at.is_some()).count();
    let diverged = runs.iter().filter(|run| run.diverged).count();
    let fraction = converged as f64 / reps;
    report.estimate("converged_fraction", fraction, (fraction * (1.0 - fraction) / reps).sqrt());
    let mut steps: Vec<usize> = runs.iter().filter_map(|run| run.converged_at).collect();
    steps.sort_unstable();
    if let Some(&median) = steps.get(steps.len() / 2) {
        report.estimate("median_convergence_step", median as f64, 0.0);
    }
    if diverged > 0 {
        report.note(format!("{diverged} of {} replicas produced non-finite distances", cfg.replicas));
    }

    match fit_window(&avg, cfg.coupling.tol) {
        Some((start, end, fit)) => {
            let rate = -fit.slope;
            report.estimate("decay_rate", rate, fit.slope_se);
            report.echo("fit_steps", format!("{start}..={end}"));
            report.verdict(
                "decay",
                rate - 2.0 * fit.slope_se > 0.0,
                "rate - 2*SE > 0",
                format!("{rate:.6e} ± {:.3e}", fit.slope_se),
            );
        }
        None => {
            report.verdict("decay", false, "rate - 2*SE > 0", "fit window has fewer than 3 points");
        }
    }
    report.verdict(
        "converged",
        fraction >= cfg.min_converged_fraction,
        format!("fraction below tol within {horizon} steps >= {}", cfg.min_converged_fraction),
        format!("{fraction}"),
    );
    report.series.push(series);
    Ok(report)
}

/// Repeats the contraction experiment for several particle counts, each with
/// its own replica count, and checks the fitted rates agree within `factor`.
pub fn dimension_sweep(base: &ContractionConfig, sizes: &[(usize, usize)], factor: f64) -> Result<ExperimentReport> {
    if sizes.is_empty() {
        return Err(invalid("n_values", "need at least one particle count"));
    }
    let mut report = ExperimentReport::new("dimension_sweep", base.seed);
    report.echo("model", base.model.describe());
    report.echo("sizes", format!("{sizes:?}"));
    let mut rates = Vec::new();
    let mut table = Series::new("rates", &["n", "decay_rate", "stderr", "replicas"]);
    for &(n, replicas) in sizes {
        let cfg = ContractionConfig { model: base.model.with_particles(n), replicas, ..base.clone() };
        let sub = contraction_experiment(&cfg)?;
        if let Some(e) = sub.get_estimate("decay_rate") {
            rates.push(e.value);
            table.push(vec![n as f64, e.value, e.stderr, replicas as f64]);
        } else {
            rates.push(f64::NAN);
        }
        report.absorb(&format!("n{n}_"), sub);
    }
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = max / min;
    report.estimate("rate_ratio", ratio, 0.0);
    report.verdict(
        "dimension_free",
        rates.iter().all(|r| r.is_finite() && *r > 0.0) && ratio <= factor,
        format!("max rate / min rate <= {factor}"),
        format!("{ratio:.4}"),
    );
    report.series.push(table);
    Ok(report)
}

/// One entry of an interaction-strength sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionCase {
    pub sign: InteractionSign,
    pub epsilon: f64,
    pub expect_converged: bool,
}

/// Runs the contraction experiment with quadratic interaction of varying
/// sign and strength, reporting converged/not converged per case.
pub fn interaction_sweep(base: &ContractionConfig, cases: &[InteractionCase]) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new("interaction_sweep", base.seed);
    report.echo("model", base.model.describe());
    report.echo("max_steps", base.coupling.max_steps);
    report.echo("min_converged_fraction", base.min_converged_fraction);
    let mut table = Series::new("cases", &["sign", "epsilon", "converged_fraction"]);
    for case in cases {
        let model = base.model.with_interaction(InteractionSpec::Quadratic { sign: case.sign }, case.epsilon);
        let cfg = ContractionConfig { model, ..base.clone() };
        let sub = contraction_experiment(&cfg)?;
        let fraction = sub.get_estimate("converged_fraction").map_or(0.0, |e| e.value);
        let converged = sub.get_verdict("converged").is_some_and(|v| v.pass);
        let label = format!("{}_{}", format!("{:?}", case.sign).to_lowercase(), case.epsilon);
        let sign = match case.sign {
            InteractionSign::Attractive => 1.0,
            InteractionSign::Repulsive => -1.0,
        };
        table.push(vec![sign, case.epsilon, fraction]);
        report.estimate(&format!("{label}_converged_fraction"), fraction, 0.0);
        report.verdict(
            &label,
            converged == case.expect_converged,
            format!(
                "expected {} within {} steps",
                if case.expect_converged { "converged" } else { "not converged" },
                base.coupling.max_steps
            ),
            if converged { "converged" } else { "not converged" },
        );
    }
    report.series.push(table);
    Ok(report)
}
