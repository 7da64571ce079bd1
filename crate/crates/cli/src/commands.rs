use std::fmt::Write as _;

use mfhmc::coupling::run_coupled_chain_with;
use mfhmc::experiments::{
    bias_study, contraction_experiment, contraction_theorem_check, dimension_sweep, marginal_check, order_study, tags,
    BiasReference, BiasStudyConfig, ContractionConfig, MarginalCheckConfig, OrderStudyConfig, TheoremCheckConfig,
};
use mfhmc::sampler::{ergodic_average, run_chain};
use mfhmc::theory::{check_conditions, derive_constants, epsilon_threshold};
use mfhmc::{Execution, ExperimentReport, PositionState, RngSpec};

use crate::config::RunConfig;
use crate::output::{sig6, Cell, OutputDir};
use crate::{Failure, Status};

pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: OutputDir,
    pub execution: Execution,
}

impl Context {
    /// Prints the summary, writes it and every series of `report`.
    fn finish(&mut self, mut report: ExperimentReport) -> Result<Status, Failure> {
        report.echo("config_hash", self.cfg.hash());
        for series in &report.series {
            self.out.write_series(series)?;
        }
        let summary = report.summary();
        self.out.write_text("summary.txt", &summary)?;
        print!("{summary}");
        Ok(if report.passed() { Status::Passed } else { Status::Failed })
    }
}

fn state_rows<'a>(states: impl IntoIterator<Item = (usize, &'a PositionState)>) -> Vec<[Cell; 4]> {
    let mut rows = Vec::new();
    for (step, x) in states {
        for (i, p) in x.particles().enumerate() {
            for (c, &v) in p.iter().enumerate() {
                rows.push([Cell::Int(step as u64), Cell::Int(i as u64), Cell::Int(c as u64), Cell::Float(v)]);
            }
        }
    }
    rows
}

const CHAIN_COLUMNS: [&str; 4] = ["step", "particle", "coord", "value"];

pub fn sample(ctx: &mut Context) -> Result<Status, Failure> {
    let model_cfg = ctx.cfg.model()?;
    let model = model_cfg.build(ctx.seed)?;
    let integrator = ctx.cfg.integrator()?;
    let init = ctx.cfg.init()?;
    let s = ctx.cfg.section("sample");
    let steps = s.req_usize("steps")?;
    let thin = s.usize("thin")?.unwrap_or(1);
    if thin == 0 {
        return Err(s.err("thin", "must be at least 1").into());
    }
    let observable = s.observable("observable")?;
    if observable.is_none() {
        s.forbid(&["burn_in", "window"], "no observable")?;
    } else if thin != 1 {
        return Err(s.err("thin", "ergodic averages need thin = 1").into());
    }

    let spec = RngSpec::new(ctx.seed, 0);
    let x0 = init.draw(&model, &mut spec.aux_rng(tags::INIT_X))?;
    let mut noise = spec.particle_noise(model.n());
    let trace = run_chain(&model, &x0, steps, &integrator, &mut noise, thin)?;
    ctx.out.write_csv("chain.csv", &CHAIN_COLUMNS, state_rows(trace.indices.iter().copied().zip(&trace.states)))?;

    let mut report = ExperimentReport::new("sample", ctx.seed);
    report.echo("model", model_cfg.describe());
    report.echo("T", integrator.duration());
    report.echo("h", integrator.step_size());
    report.echo("steps", steps);
    report.echo("thin", thin);
    if let Some(f) = observable {
        f.validate(model.d()).map_err(|e| s.err("observable", e.to_string()))?;
        let burn_in = s.usize("burn_in")?.unwrap_or(0);
        let window = match s.usize("window")? {
            Some(w) => w,
            None => (steps + 1).checked_sub(burn_in).ok_or_else(|| s.err("burn_in", "exceeds the chain length"))?,
        };
        let avg = ergodic_average(&trace, &f, burn_in, window).map_err(|e| s.err("window", e.to_string()))?;
        report.echo("observable", format!("{f:?}"));
        report.echo("burn_in", burn_in);
        report.echo("window", window);
        report.estimate("ergodic_average", avg, 0.0);
    }
    ctx.finish(report)
}

pub fn couple(ctx: &mut Context) -> Result<Status, Failure> {
    let model_cfg = ctx.cfg.model()?;
    let model = model_cfg.build(ctx.seed)?;
    let integrator = ctx.cfg.integrator()?;
    let params = ctx.cfg.coupling(Some(integrator.duration()))?;
    let init = ctx.cfg.init()?;
    let s = ctx.cfg.section("couple");
    let replicas = s.usize("replicas")?.unwrap_or(1);
    if replicas == 0 {
        return Err(s.err("replicas", "must be at least 1").into());
    }
    let min_fraction = s.f64("min_converged_fraction")?.unwrap_or(0.9);
    let n_values = s.usize_list("n_values")?;
    if n_values.is_none() {
        s.forbid(&["replicas_per_n", "rate_factor"], "no n_values")?;
    }

    // the traced pair is replica 0 of the study
    let spec = RngSpec::new(ctx.seed, 0);
    let x0 = init.draw(&model, &mut spec.aux_rng(tags::INIT_X))?;
    let y0 = init.draw(&model, &mut spec.aux_rng(tags::INIT_Y))?;
    let mut noise = spec.particle_noise(model.n());
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let trace = run_coupled_chain_with(&model, &x0, &y0, &integrator, &params, &mut noise, |k, phase| {
        xs.push((k, phase.x.clone()));
        ys.push((k, phase.y.clone()));
    })?;
    let rows = trace.records.iter().map(|r| {
        [
            Cell::Int(r.step as u64),
            Cell::Float(r.mean_distance),
            Cell::Float(r.ell1),
            Cell::Float(r.rho),
            Cell::Int(r.n_sync as u64),
            Cell::Int(r.n_shift as u64),
            Cell::Int(r.n_reflect as u64),
        ]
    });
    ctx.out.write_csv("coupling.csv", &["step", "mean_distance", "ell1", "rho", "n_sync", "n_shift", "n_reflect"], rows)?;
    ctx.out.write_csv("chain_x.csv", &CHAIN_COLUMNS, state_rows(xs.iter().map(|(k, x)| (*k, x))))?;
    ctx.out.write_csv("chain_y.csv", &CHAIN_COLUMNS, state_rows(ys.iter().map(|(k, y)| (*k, y))))?;

    let mut report = ExperimentReport::new("couple", ctx.seed);
    report.echo("model", model_cfg.describe());
    report.echo("T", integrator.duration());
    report.echo("h", integrator.step_size());
    report.echo("gamma", params.gamma);
    report.echo("r_tilde", params.r_tilde);
    report.echo("tol", params.tol);
    report.echo("max_steps", params.max_steps);
    report.estimate("pair_steps", trace.steps() as f64, 0.0);
    report.estimate("pair_final_mean_distance", trace.records.last().map_or(f64::NAN, |r| r.mean_distance), 0.0);
    report.note(match (trace.converged, trace.diverged) {
        (true, _) => format!("traced pair met below tol after {} steps", trace.steps()),
        (_, true) => "traced pair diverged".to_string(),
        _ => format!("traced pair still apart after {} steps", trace.steps()),
    });

    if replicas > 1 || n_values.is_some() {
        let base = ContractionConfig {
            model: model_cfg,
            integrator,
            coupling: params,
            replicas,
            seed: ctx.seed,
            init,
            min_converged_fraction: min_fraction,
            execution: ctx.execution,
        };
        let study = match n_values {
            Some(ns) => {
                let per_n = s.usize_list("replicas_per_n")?.unwrap_or_else(|| vec![replicas; ns.len()]);
                if per_n.len() != ns.len() {
                    return Err(s.err("replicas_per_n", "need one replica count per entry of n_values").into());
                }
                let sizes: Vec<(usize, usize)> = ns.into_iter().zip(per_n).collect();
                dimension_sweep(&base, &sizes, s.positive("rate_factor")?.unwrap_or(2.0))?
            }
            None => contraction_experiment(&base)?,
        };
        report.echo("replicas", replicas);
        report.absorb("", study);
    }
    ctx.finish(report)
}

fn constants_header(ctx: &Context) -> Result<(mfhmc::RegularityParams, f64, String), Failure> {
    let t = ctx.cfg.duration()?;
    let reg = ctx.cfg.regularity()?;
    let header = format!(
        "K={} L={} L_tilde={} R={} epsilon={} T={}",
        sig6(reg.k),
        sig6(reg.l),
        sig6(reg.l_tilde),
        sig6(reg.r),
        sig6(reg.epsilon),
        sig6(t)
    );
    Ok((reg, t, header))
}

pub fn constants(ctx: &mut Context) -> Result<Status, Failure> {
    let (reg, t, header) = constants_header(ctx)?;
    let dc = derive_constants(&reg, t)?;
    let threshold = epsilon_threshold(&reg, t)?;
    let mut body = format!("# constants {header}\n");
    for (name, value) in [
        ("R_tilde", dc.r_tilde),
        ("gamma", dc.gamma),
        ("R1", dc.r1),
        ("kappa", dc.kappa),
        ("c", dc.c),
        ("M", dc.m),
        ("c_hat", dc.c_hat),
        ("epsilon_threshold", threshold),
    ] {
        let _ = writeln!(body, "{name}={}", sig6(value));
    }
    let _ = writeln!(body, "kappa_positive={}", dc.kappa_positive);
    ctx.out.write_text("constants.txt", &body)?;
    print!("{body}");
    Ok(Status::Passed)
}

pub fn check(ctx: &mut Context) -> Result<Status, Failure> {
    let (reg, t, header) = constants_header(ctx)?;
    let h1 = match ctx.cfg.section("regularity").non_negative("h1")? {
        Some(h) => h,
        None => match ctx.cfg.steps()? {
            Some(steps) => t / steps as f64,
            None => return Err(ctx.cfg.section("regularity").missing("h1").into()),
        },
    };
    let report = check_conditions(&reg, t, h1)?;
    let mut body = format!("# conditions {header} h1={}\n", sig6(h1));
    let width = report.entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in &report.entries {
        let tag = if e.pass { "ok" } else { "FAIL" };
        let _ = writeln!(body, "{:<width$} {tag} {} {} {}", e.name, sig6(e.lhs), e.relation(), sig6(e.rhs));
    }
    let _ = writeln!(body, "verdict: {}", if report.all_pass() { "PASS" } else { "FAIL" });
    ctx.out.write_text("conditions.txt", &body)?;
    print!("{body}");
    Ok(if report.all_pass() { Status::Passed } else { Status::Failed })
}

pub fn order(ctx: &mut Context) -> Result<Status, Failure> {
    let model = ctx.cfg.model()?;
    let duration = ctx.cfg.duration()?;
    let init = ctx.cfg.init()?;
    let s = ctx.cfg.section("order");
    let ladder = s.usize_list("ladder")?.ok_or_else(|| s.missing("ladder"))?;
    let finest = ladder.last().copied().unwrap_or(1);
    let cfg = OrderStudyConfig {
        model,
        duration,
        reference_steps: s.usize("reference_steps")?.unwrap_or(64 * finest),
        ladder,
        replicas: s.usize("replicas")?.unwrap_or(20),
        seed: ctx.seed,
        init,
        expected_order: s.range("expected_order")?.unwrap_or((1.7, 2.3)),
        harmonic_stiffness: s.positive("harmonic_stiffness")?,
        harmonic_tolerance: s.positive("harmonic_tolerance")?.unwrap_or(0.1),
        n_values: s.usize_list("n_values")?.unwrap_or_default(),
        execution: ctx.execution,
    };
    let report = order_study(&cfg)?;
    ctx.finish(report)
}

pub fn bias(ctx: &mut Context) -> Result<Status, Failure> {
    let model = ctx.cfg.model()?;
    let duration = ctx.cfg.duration()?;
    let init = ctx.cfg.init()?;
    let s = ctx.cfg.section("bias");
    let reference = s.reference("reference")?.unwrap_or(BiasReference::Target);
    let target = match reference {
        BiasReference::Target => s.req_f64("target")?,
        _ => {
            s.forbid(&["target"], "a chain reference")?;
            0.0
        }
    };
    let observable = s.observable("observable")?.ok_or_else(|| s.missing("observable"))?;
    let cfg = BiasStudyConfig {
        model,
        duration,
        ladder: s.usize_list("ladder")?.ok_or_else(|| s.missing("ladder"))?,
        burn_in: s.usize("burn_in")?.unwrap_or(0),
        window: s.req_usize("window")?,
        replicas: s.usize("replicas")?.unwrap_or(8),
        seed: ctx.seed,
        observable,
        target,
        reference,
        init,
        n_values: s.usize_list("n_values")?.unwrap_or_default(),
        expected_order: s.range("expected_order")?,
        noise_budget: s.positive("noise_budget")?.unwrap_or(0.2),
        execution: ctx.execution,
    };
    let report = bias_study(&cfg)?;
    ctx.finish(report)
}

pub fn contraction_check(ctx: &mut Context) -> Result<Status, Failure> {
    let model = ctx.cfg.model()?;
    let regularity = ctx.cfg.regularity()?;
    let integrator = ctx.cfg.integrator()?;
    let s = ctx.cfg.section("contraction_check");
    let cfg = TheoremCheckConfig {
        x: s.positions("x", model.n, model.d)?,
        y: s.positions("y", model.n, model.d)?,
        model,
        regularity,
        integrator,
        draws: s.usize("draws")?.unwrap_or(100_000),
        seed: ctx.seed,
        execution: ctx.execution,
    };
    let report = contraction_theorem_check(&cfg)?;
    ctx.finish(report)
}

pub fn marginal(ctx: &mut Context) -> Result<Status, Failure> {
    let (n, d) = ctx.cfg.dims()?;
    let duration = if ctx.cfg.section("integrator").has("T") { Some(ctx.cfg.duration()?) } else { None };
    let params = ctx.cfg.coupling(duration)?;
    let s = ctx.cfg.section("marginal");
    let cfg = MarginalCheckConfig {
        x: s.positions("x", n, d)?,
        y: s.positions("y", n, d)?,
        params,
        draws: s.usize("draws")?.unwrap_or(100_000),
        seed: ctx.seed,
    };
    let report = marginal_check(&cfg)?;
    ctx.finish(report)
}
