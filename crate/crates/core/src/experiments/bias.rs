//! Bias of ergodic averages of unadjusted HMC.

use crate::error::{invalid, Result};
use crate::integrator::{harmonic_exact_in_place, IntegratorConfig};
use crate::model::MeanFieldModel;
use crate::sampler::{HmcKernel, Observable, RngSpec};
use crate::stats::{LinearFit, Moments, NeumaierSum};

use super::{fmt_range, tags, Execution, ExperimentReport, Initializer, ModelConfig, Series};

/// What the ergodic average is compared with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasReference {
    /// The known value `μ(f)` in the config.
    Target,
    /// An exact-flow HMC chain driven by the same velocities; needs a
    /// harmonic product model. Started from its invariant law, its average
    /// has mean exactly `μ(f)`, so it serves as a control variate.
    ExactHarmonic,
    /// A Verlet chain with `steps` substeps driven by the same velocities.
    FineVerlet { steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudyConfig {
    pub model: ModelConfig,
    pub duration: f64,
    /// Verlet step counts `T/h`, strictly increasing.
    pub ladder: Vec<usize>,
    pub burn_in: usize,
    pub window: usize,
    pub replicas: usize,
    pub seed: u64,
    pub observable: Observable,
    /// `μ(f)`
    pub target: f64,
    pub reference: BiasReference,
    pub init: Initializer,
    /// Particle counts; empty means the model's own.
    pub n_values: Vec<usize>,
    pub expected_order: Option<(f64, f64)>,
    /// Largest allowed ratio of standard error to bias at every level, when
    /// an order is expected.
    pub noise_budget: f64,
    pub execution: Execution,
}

impl BiasStudyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(invalid("T", "duration must be positive"));
        }
        if self.ladder.is_empty() || self.ladder[0] == 0 || self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ladder", "need strictly decreasing step sizes"));
        }
        if self.window == 0 {
            return Err(invalid("m", "averaging window must be at least 1"));
        }
        if self.replicas < 2 {
            return Err(invalid("replicas", "need at least two replicas for a standard error"));
        }
        self.observable.validate(self.model.d)?;
        if self.reference == BiasReference::ExactHarmonic && self.model.harmonic_stiffness().is_none() {
            return Err(invalid("reference", "exact reference needs a quadratic product model"));
        }
        if let BiasReference::FineVerlet { steps } = self.reference {
            if steps == 0 {
                return Err(invalid("reference", "fine reference needs at least one step"));
            }
        }
        Ok(())
    }

    fn n_list(&self) -> Vec<usize> {
        if self.n_values.is_empty() {
            vec![self.model.n]
        } else {
            self.n_values.clone()
        }
    }
}

/// `A_h − A_ref` (or `A_h − μ(f)`) for one replica.
fn replica_difference(model: &MeanFieldModel<f64>, cfg: &BiasStudyConfig, steps: usize, r: usize) -> Result<f64> {
    let (n, d) = (model.n(), model.d());
    let spec = RngSpec::new(cfg.seed, r as u64);
    let mut x = cfg.init.draw(model, &mut spec.aux_rng(tags::INIT_X))?.into_vec();
    let mut x_ref = x.clone();
    let mut noise = spec.particle_noise(n);
    let mut kernel = HmcKernel::new(model, IntegratorConfig::new(cfg.duration, steps)?);
    let mut fine = match cfg.reference {
        BiasReference::FineVerlet { steps } => Some(HmcKernel::new(model, IntegratorConfig::new(cfg.duration, steps)?)),
        _ => None,
    };
    let stiffness = cfg.model.harmonic_stiffness().unwrap_or(1.0);
    let mut v = vec![0.0; n * d];
    let mut v_ref = vec![0.0; n * d];
    let f = &cfg.observable;
    let total = cfg.burn_in + cfg.window;
    let mut sum = NeumaierSum::default();
    for k in 0..total {
        if k >= cfg.burn_in {
            let value = f.eval_raw(&x, d);
            match cfg.reference {
                BiasReference::Target => sum.add(value),
                _ => sum.add(value - f.eval_raw(&x_ref, d)),
            }
        }
        if k + 1 == total {
            break;
        }
        noise.fill_normal(d, &mut v);
        if cfg.reference != BiasReference::Target {
            v_ref.copy_from_slice(&v);
        }
        kernel.flow_with(model, &mut x, &mut v);
        match cfg.reference {
            BiasReference::Target => {}
            BiasReference::ExactHarmonic => harmonic_exact_in_place(stiffness, &mut x_ref, &mut v_ref, cfg.duration),
            BiasReference::FineVerlet { .. } => {
                if let Some(fine) = fine.as_mut() {
                    fine.flow_with(model, &mut x_ref, &mut v_ref);
                }
            }
        }
    }
    let avg = sum.value() / cfg.window as f64;
    Ok(match cfg.reference {
        BiasReference::Target => avg - cfg.target,
        _ => avg,
    })
}

/// Estimated bias `E[A_{m,b} f] − μ(f)` per step size and particle count.
pub fn bias_study(cfg: &BiasStudyConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut report = ExperimentReport::new("bias", cfg.seed);
    report.echo("model", cfg.model.describe());
    report.echo("T", cfg.duration);
    report.echo("ladder", format!("{:?}", cfg.ladder));
    report.echo("b", cfg.burn_in);
    report.echo("m", cfg.window);
    report.echo("replicas", cfg.replicas);
    report.echo("observable", format!("{:?}", cfg.observable));
    report.echo("target", cfg.target);
    report.echo("reference", format!("{:?}", cfg.reference));

    let hs: Vec<f64> = cfg.ladder.iter().map(|&s| cfg.duration / s as f64).collect();
    let mut series = Series::new("bias", &["h", "abs_bias", "stderr", "n"]);
    // signed (bias, se) per n, per level
    let mut signed: Vec<Vec<(f64, f64)>> = Vec::new();
    for &n in &cfg.n_list() {
        let sub = cfg.model.with_particles(n);
        let model = sub.build(cfg.seed)?;
        let mut levels = Vec::new();
        for (j, &steps) in cfg.ladder.iter().enumerate() {
            let diffs = cfg.execution.map(cfg.replicas, |r| replica_difference(&model, cfg, steps, r));
            let diffs = diffs.into_iter().collect::<Result<Vec<_>>>()?;
            let m = Moments::of(&diffs);
            let se = m.std_error();
            series.push(vec![hs[j], m.mean.abs(), se, n as f64]);
            levels.push((m.mean, se));
        }

        let abs: Vec<f64> = levels.iter().map(|l| l.0.abs()).collect();
        if abs.len() >= 2 {
            let monotone = abs.windows(2).all(|w| w[1] < w[0] || w == [0.0, 0.0]);
            report.verdict(
                &format!("n{n}_decreasing"),
                monotone,
                "|bias| strictly decreases as h decreases (or stays 0)",
                abs.iter().map(|b| format!("{b:.3e}")).collect::<Vec<_>>().join(", "),
            );
        }
        if let Some((lo, hi)) = cfg.expected_order {
            match LinearFit::log_log(&hs, &abs) {
                Some(fit) if fit.slope.is_finite() => {
                    report.estimate(&format!("n{n}_order"), fit.slope, fit.slope_se);
                    let (a, b) = (fit.slope - 2.0 * fit.slope_se, fit.slope + 2.0 * fit.slope_se);
                    report.verdict(
                        &format!("n{n}_order"),
                        a >= lo && b <= hi,
                        format!("slope ± 2*SE within {}", fmt_range(lo, hi)),
                        format!("{:.4} ± {:.4}", fit.slope, 2.0 * fit.slope_se),
                    );
                }
                _ => report.verdict(&format!("n{n}_order"), false, format!("slope within {}", fmt_range(lo, hi)), "no fit"),
            }
            let worst = levels.iter().map(|(b, se)| se / b.abs()).fold(0.0, f64::max);
            report.verdict(
                &format!("n{n}_noise"),
                worst <= cfg.noise_budget,
                format!("SE / |bias| <= {} at every h", cfg.noise_budget),
                format!("{worst:.4}"),
            );
        }
        signed.push(levels);
    }

    let ns = cfg.n_list();
    if ns.len() >= 2 {
        let mut worst: f64 = 0.0;
        for j in 0..cfg.ladder.len() {
            for a in 0..ns.len() {
                for b in a + 1..ns.len() {
                    let (ba, sa) = signed[a][j];
                    let (bb, sb) = signed[b][j];
                    let combined = (sa * sa + sb * sb).sqrt();
                    let z = if combined > 0.0 { (ba - bb).abs() / combined } else if ba == bb { 0.0 } else { f64::INFINITY };
                    worst = worst.max(z);
                }
            }
        }
        report.estimate("max_pairwise_sigma", worst, 0.0);
        report.verdict(
            "n_independent",
            worst <= 3.0,
            "pairwise bias differences across n within 3 combined sigma",
            format!("{worst:.3} sigma"),
        );
    }
    report.series.push(series);
    Ok(report)
}
