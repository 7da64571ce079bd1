//! Monte Carlo check of one-step contraction in the ρ metric.

use crate::coupling::{CoupledKernel, CoupledPhase, CouplingParams};
use crate::error::{invalid, Result};
use crate::integrator::IntegratorConfig;
use crate::model::PositionState;
use crate::sampler::RngSpec;
use crate::stats::Moments;
use crate::theory::{check_conditions, derive_constants, rho_distance, RegularityParams};

use super::{Execution, ExperimentReport, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremCheckConfig {
    pub model: ModelConfig,
    /// Must carry the same `ε` as the model.
    pub regularity: RegularityParams<f64>,
    pub integrator: IntegratorConfig<f64>,
    pub x: PositionState<f64>,
    pub y: PositionState<f64>,
    pub draws: usize,
    pub seed: u64,
    pub execution: Execution,
}

/// Estimates `E[ρ(X, Y)]` after one coupled transition from fixed `(x, y)`
/// and compares it with `(1 − c)ρ(x, y)`. Refuses a verdict when the step
/// size conditions fail.
pub fn contraction_theorem_check(cfg: &TheoremCheckConfig) -> Result<ExperimentReport> {
    if cfg.draws < 2 {
        return Err(invalid("draws", "need at least two draws"));
    }
    if cfg.regularity.epsilon != cfg.model.epsilon {
        return Err(invalid("epsilon", "regularity and model epsilon differ"));
    }
    let model = cfg.model.build(cfg.seed)?;
    cfg.x.check_shape(model.n(), model.d())?;
    cfg.y.check_shape(model.n(), model.d())?;
    let t = cfg.integrator.duration();
    let h = cfg.integrator.step_size();

    let mut report = ExperimentReport::new("contraction_check", cfg.seed);
    report.echo("model", cfg.model.describe());
    report.echo("K", cfg.regularity.k);
    report.echo("L", cfg.regularity.l);
    report.echo("L_tilde", cfg.regularity.l_tilde);
    report.echo("R", cfg.regularity.r);
    report.echo("T", t);
    report.echo("h", h);
    report.echo("draws", cfg.draws);

    let conditions = check_conditions(&cfg.regularity, t, h)?;
    for e in &conditions.entries {
        report.echo(
            &format!("condition.{}", e.name),
            format!("{} {:e} {} {:e}", if e.pass { "ok" } else { "FAIL" }, e.lhs, e.relation(), e.rhs),
        );
    }
    if !conditions.all_pass() {
        let failing = conditions.failing().join(", ");
        report.note(format!("conditions fail, no verdict: {failing}"));
        report.verdict("conditions", false, "all step size and interaction conditions hold", failing);
        return Ok(report);
    }

    let dc = derive_constants(&cfg.regularity, t)?;
    let params = CouplingParams::from_constants(&dc, 1e-12, 1)?;
    let r1 = dc.r1;
    let rho0 = rho_distance(&cfg.x, &cfg.y, t, r1)?;
    let samples = cfg.execution.map(cfg.draws, |r| -> Result<f64> {
        let mut noise = RngSpec::new(cfg.seed, r as u64).particle_noise(model.n());
        let mut phase = CoupledPhase::new(cfg.x.clone(), cfg.y.clone())?;
        CoupledKernel::new(&model, cfg.integrator, params).step(&model, &mut phase, &mut noise);
        rho_distance(&phase.x, &phase.y, t, r1)
    });
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    let m = Moments::of(&samples);
    let se = m.std_error();
    let bound = (1.0 - dc.c) * rho0;

    report.estimate("rho_initial", rho0, 0.0);
    report.estimate("rho_after", m.mean, se);
    if rho0 > 0.0 {
        report.estimate("rho_ratio", m.mean / rho0, se / rho0);
    }
    report.estimate("c", dc.c, 0.0);
    report.estimate("one_minus_c", 1.0 - dc.c, 0.0);
    report.verdict(
        "contraction",
        m.mean + 4.0 * se <= bound,
        format!("E[rho] + 4*SE <= (1 - c) rho(x, y) = {bound:.6e}"),
        format!("{:.6e} + 4*{:.3e}", m.mean, se),
    );
    Ok(report)
}
