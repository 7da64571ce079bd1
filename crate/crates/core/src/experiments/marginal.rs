//! Normality of the coupled velocity marginal.

use crate::coupling::{refresh_velocities, Branch, CouplingParams};
use crate::error::{invalid, Result};
use crate::model::PositionState;
use crate::sampler::RngSpec;
use crate::stats::Moments;

use super::{ExperimentReport, Series};

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCheckConfig {
    pub x: PositionState<f64>,
    pub y: PositionState<f64>,
    pub params: CouplingParams<f64>,
    pub draws: usize,
    pub seed: u64,
}

/// Draws coupled refreshments `(ξ, η)` at fixed `(x, y)` and checks every
/// coordinate of `η` has mean 0, variance 1 and skewness 0 within 4 Monte
/// Carlo standard deviations.
pub fn marginal_check(cfg: &MarginalCheckConfig) -> Result<ExperimentReport> {
    cfg.params.validate()?;
    cfg.y.check_shape(cfg.x.n(), cfg.x.d())?;
    if cfg.draws < 2 {
        return Err(invalid("draws", "need at least two draws"));
    }
    let (n, d) = (cfg.x.n(), cfg.x.d());
    let len = n * d;
    let mut noise = RngSpec::new(cfg.seed, 0).particle_noise(n);
    let mut xi = vec![0.0; len];
    let mut eta = vec![0.0; len];
    let mut branches = vec![Branch::Synchronous; n];
    let mut counts = [0usize; 3];
    let mut columns = vec![Vec::with_capacity(cfg.draws); len];
    for _ in 0..cfg.draws {
        refresh_velocities(cfg.x.as_slice(), cfg.y.as_slice(), d, &cfg.params, &mut noise, &mut xi, &mut eta, &mut branches);
        for b in &branches {
            counts[*b as usize] += 1;
        }
        for (col, &v) in columns.iter_mut().zip(&eta) {
            col.push(v);
        }
    }

    let nf = cfg.draws as f64;
    let sd_mean = 1.0 / nf.sqrt();
    let sd_var = (2.0 / nf).sqrt();
    let sd_skew = (6.0 / nf).sqrt();
    let mut series = Series::new("moments", &["coordinate", "mean", "variance", "skewness"]);
    let mut worst: f64 = 0.0;
    for (c, col) in columns.iter().enumerate() {
        let m = Moments::of(col);
        series.push(vec![c as f64, m.mean, m.variance, m.skewness]);
        worst = worst
            .max(m.mean.abs() / sd_mean)
            .max((m.variance - 1.0).abs() / sd_var)
            .max(m.skewness.abs() / sd_skew);
    }

    let mut report = ExperimentReport::new("marginal", cfg.seed);
    report.echo("n", n);
    report.echo("d", d);
    report.echo("gamma", cfg.params.gamma);
    report.echo("r_tilde", cfg.params.r_tilde);
    report.echo("rule", format!("{:?}", cfg.params.rule));
    report.echo("draws", cfg.draws);
    report.estimate("synchronous", counts[Branch::Synchronous as usize] as f64, 0.0);
    report.estimate("shifted", counts[Branch::Shifted as usize] as f64, 0.0);
    report.estimate("reflected", counts[Branch::Reflected as usize] as f64, 0.0);
    report.estimate("max_sigma", worst, 0.0);
    report.verdict(
        "normal_marginal",
        worst <= 4.0,
        "every coordinate's mean, variance and skewness within 4 Monte Carlo sigma of (0, 1, 0)",
        format!("{worst:.3} sigma"),
    );
    report.series.push(series);
    Ok(report)
}
