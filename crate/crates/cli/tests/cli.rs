use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfhmc_cli::RunConfig;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mfhmc"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(dir: &Path, command: &str, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    run_file(dir, command, &path, "out", extra)
}

fn run_file(dir: &Path, command: &str, config: &Path, out: &str, extra: &[&str]) -> Output {
    bin().arg(command).arg("--config").arg(config).arg("--out").arg(dir.join(out)).args(extra).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=...` in the output.
fn value(text: &str, key: &str) -> f64 {
    let prefix = format!("{key}=");
    text.lines().find_map(|l| l.strip_prefix(&prefix)).unwrap_or_else(|| panic!("no {key} in {text}")).parse().unwrap()
}

const CONSTANTS: &str = "[integrator]\nT = 0.5\n[regularity]\nK = 1\nL = 1\nR = 0\nh1 = 0\n";

const QUADRATIC: &str = r#"
[model]
confinement = "quadratic"
interaction = "attractive"
epsilon = 0.2
n = 3
d = 2

[integrator]
T = 0.8
steps = 8

[init]
kind = "gaussian"
"#;

#[test]
fn constants_reproduce_reference_values() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "constants", CONSTANTS, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("c=1.60256e-3"), "{text}");
    // K T² / 156 and exp(5/2) by hand
    let c = value(&text, "c");
    let m = value(&text, "M");
    assert!((c / (0.25 / 156.0) - 1.0).abs() < 5e-6);
    assert!((m / 2.5f64.exp() - 1.0).abs() < 5e-6);
    assert!((m / 12.18249 - 1.0).abs() < 5e-6);
    assert_eq!(value(&text, "gamma"), 2.0);
}

#[test]
fn failed_condition_exits_3() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "check", CONSTANTS, &[]);
    assert_eq!(o.status.code(), Some(3));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.starts_with("cond_T")).unwrap();
    assert!(line.contains("FAIL") && line.ends_with("0.25 > 0.15"), "{line}");
    assert!(text.lines().filter(|l| l.contains(" FAIL ")).count() == 1, "{text}");
}

#[test]
fn check_takes_h1_from_integrator() {
    let dir = TempDir::new().unwrap();
    let cfg = "[integrator]\nT = 0.35\nsteps = 1000\n[regularity]\nK = 1\nL = 1\n";
    let o = run(dir.path(), "check", cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("h1=3.5e-4"));
}

#[test]
fn missing_particle_count_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = QUADRATIC.replace("n = 3\n", "");
    let o = run(dir.path(), "sample", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`model.n`"), "{}", stderr(&o));
}

#[test]
fn unknown_key_names_key_and_line() {
    let dir = TempDir::new().unwrap();
    let cfg = QUADRATIC.replace("d = 2\n", "d = 2\nstifness = 3\n");
    let o = run(dir.path(), "sample", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`model.stifness` (line 8)"), "{}", stderr(&o));
}

#[test]
fn config_errors_carry_lines() {
    let err = RunConfig::parse("[model]\nn = 3\n[moddel]\nd = 2\n".into()).unwrap_err();
    assert_eq!((err.key.as_str(), err.line), ("moddel", Some(3)));
    let err = RunConfig::parse("seed = 1\nthreads = 4\n".into()).unwrap_err();
    assert_eq!((err.key.as_str(), err.line), ("threads", Some(2)));
    let err = RunConfig::parse("[model]\nn = 3\nn = 4\n".into()).unwrap_err();
    assert_eq!((err.key.as_str(), err.line), ("config", Some(3)));

    let cfg = RunConfig::parse("[model]\nconfinement = \"quadratic\"\nn = 2\nd = 2\nmeans = [[0.0, 0.0]]\n".into()).unwrap();
    let err = cfg.model().unwrap_err();
    assert_eq!((err.key.as_str(), err.line), ("model.means", Some(5)));
    let cfg = RunConfig::parse("[model]\nconfinement = \"quadratic\"\nn = -2\nd = 2\n".into()).unwrap();
    assert_eq!(cfg.model().unwrap_err().line, Some(3));
    let cfg = RunConfig::parse("[integrator]\nT = 1.0\nh = 0.3\n".into()).unwrap();
    assert_eq!(cfg.integrator().unwrap_err().key, "integrator.h");
    let cfg = RunConfig::parse("[integrator]\nT = 1.0\nh = 0.05\n".into()).unwrap();
    assert_eq!(cfg.integrator().unwrap().steps(), 20);
}

#[test]
fn sample_is_reproducible_and_seeded() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{QUADRATIC}\n[sample]\nsteps = 30\nobservable = \"squared_norm\"\nburn_in = 5\n");
    let path = dir.path().join("s.toml");
    fs::write(&path, &cfg).unwrap();
    let a = run_file(dir.path(), "sample", &path, "a", &[]);
    let b = run_file(dir.path(), "sample", &path, "b", &[]);
    let c = run_file(dir.path(), "sample", &path, "c", &["--seed", "7"]);
    for o in [&a, &b, &c] {
        assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
    }
    let read = |d: &str| fs::read(dir.path().join(d).join("chain.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let text = String::from_utf8(read("a")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().ends_with(" seed=42"));
    assert_eq!(lines.next().unwrap(), "step,particle,coord,value");
    // 31 states of 3 particles in 2d
    assert_eq!(lines.count(), 31 * 6);
    assert!(stdout(&a).contains("ergodic_average"));
    assert!(fs::read_to_string(dir.path().join("c/chain.csv")).unwrap().starts_with("# config_hash="));
}

#[test]
fn config_seed_is_used_and_overridden() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("seed = 11\n{QUADRATIC}\n[sample]\nsteps = 3\n");
    let o = run(dir.path(), "sample", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let header = fs::read_to_string(dir.path().join("out/chain.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with(" seed=11"));
    let o = run(dir.path(), "sample", &cfg, &["--seed", "12"]);
    assert_eq!(o.status.code(), Some(0));
    let header = fs::read_to_string(dir.path().join("out/chain.csv")).unwrap();
    assert!(header.lines().next().unwrap().ends_with(" seed=12"));
}

#[test]
fn couple_outputs_follow_schema_and_ignore_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{QUADRATIC}\n[coupling]\ngamma = 1.25\nr_tilde = inf\ntol = 1e-6\nmax_steps = 60\n[couple]\nreplicas = 12\n");
    let path = dir.path().join("c.toml");
    fs::write(&path, &cfg).unwrap();
    let seq = run_file(dir.path(), "couple", &path, "seq", &["--threads", "1"]);
    let par = run_file(dir.path(), "couple", &path, "par", &["--threads", "4"]);
    assert_eq!(seq.status.code(), Some(0), "{}{}", stdout(&seq), stderr(&seq));
    assert_eq!(stdout(&seq), stdout(&par));
    for name in ["coupling.csv", "chain_x.csv", "chain_y.csv", "mean_distance.csv", "summary.txt"] {
        let a = fs::read_to_string(dir.path().join("seq").join(name)).unwrap();
        let b = fs::read_to_string(dir.path().join("par").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
        assert!(a.starts_with("# config_hash=") && a.lines().next().unwrap().ends_with(" seed=42"), "{name}");
    }
    let trace = fs::read_to_string(dir.path().join("seq/coupling.csv")).unwrap();
    assert_eq!(trace.lines().nth(1).unwrap(), "step,mean_distance,ell1,rho,n_sync,n_shift,n_reflect");
    let last: Vec<&str> = trace.lines().last().unwrap().split(',').collect();
    assert_eq!(last.len(), 7);
    let counts: u64 = last[4..].iter().map(|v| v.parse::<u64>().unwrap()).sum();
    assert_eq!(counts, 3);
    // ℓ¹ is n times the mean distance and ρ never exceeds ℓ¹
    for row in trace.lines().skip(2) {
        let v: Vec<f64> = row.split(',').take(4).map(|x| x.parse().unwrap()).collect();
        assert!((v[2] - 3.0 * v[1]).abs() <= 1e-12 * v[2].max(1.0));
        assert!(v[3] <= v[2] * (1.0 + 1e-12));
    }
    let x = fs::read_to_string(dir.path().join("seq/chain_x.csv")).unwrap();
    let steps = trace.lines().count() - 2;
    assert_eq!(x.lines().count() - 2, steps * 6);
}

#[test]
fn couple_derives_coupling_from_regularity() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{QUADRATIC}\n[regularity]\nK = 1\nL = 1\nL_tilde = 1\n[coupling]\nmax_steps = 5\n");
    let o = run(dir.path(), "couple", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // R = 0 gives γ = 1/T and R̃ = 0
    assert!(stdout(&o).contains("gamma        1.25"), "{}", stdout(&o));
    let cfg = format!("{QUADRATIC}\n[coupling]\nmax_steps = 5\n");
    let o = run(dir.path(), "couple", &cfg, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`coupling.gamma`"));
}

#[test]
fn strong_repulsion_reports_non_convergence() {
    let dir = TempDir::new().unwrap();
    let base = fs::read_to_string(configs().join("mixture.toml")).unwrap();
    let cfg = base
        .replace("interaction = \"attractive\"", "interaction = \"repulsive\"")
        .replace("epsilon = 0.01", "epsilon = 2.0")
        .replace("replicas = 100", "replicas = 10");
    let o = run(dir.path(), "couple", &cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("[FAIL] converged"));
}

#[test]
fn mixture_example_reproduces() {
    let dir = TempDir::new().unwrap();
    let o = run_file(dir.path(), "couple", &configs().join("mixture.toml"), "out", &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let table = fs::read_to_string(dir.path().join("out/mean_distance.csv")).unwrap();
    let rows: Vec<Vec<f64>> = table.lines().skip(2).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 201);
    assert!(rows[200][2] >= 0.9);
}

#[test]
fn order_and_bias_tables() {
    let dir = TempDir::new().unwrap();
    let cfg = format!("{QUADRATIC}\n[order]\nladder = [4, 8, 16]\nreplicas = 4\n");
    let o = run(dir.path(), "order-study", &cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let table = fs::read_to_string(dir.path().join("out/order.csv")).unwrap();
    assert_eq!(table.lines().nth(1).unwrap(), "h,mean_error,stderr");
    assert_eq!(table.lines().count(), 2 + 3);

    let cfg = "[model]\nconfinement = \"quadratic\"\nn = 2\nd = 1\n[integrator]\nT = 1.0\n[init]\nkind = \"gaussian\"\n\
               [bias]\nladder = [5, 10]\nwindow = 2000\nreplicas = 4\nobservable = \"square:0\"\nreference = \"exact_harmonic\"\n";
    let o = run(dir.path(), "bias-study", cfg, &[]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let table = fs::read_to_string(dir.path().join("out/bias.csv")).unwrap();
    assert_eq!(table.lines().nth(1).unwrap(), "h,abs_bias,stderr,n");
    let row: Vec<&str> = table.lines().nth(2).unwrap().split(',').collect();
    assert_eq!(row[3], "2");

    let bad = cfg.replace("reference = \"exact_harmonic\"", "reference = \"exact\"");
    let o = run(dir.path(), "bias-study", &bad, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`bias.reference` (line"));
}

#[test]
fn marginal_check_detects_broken_rule() {
    let dir = TempDir::new().unwrap();
    let base = fs::read_to_string(configs().join("marginal.toml")).unwrap().replace("draws = 100000", "draws = 20000");
    let o = run(dir.path(), "marginal-check", &base, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let moments = fs::read_to_string(dir.path().join("out/moments.csv")).unwrap();
    assert_eq!(moments.lines().nth(1).unwrap(), "coordinate,mean,variance,skewness");
    let broken = base.replace("r_tilde = 2.0", "r_tilde = 2.0\nrule = \"without_reflection\"");
    let o = run(dir.path(), "marginal-check", &broken, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
}

#[test]
fn contraction_check_refuses_bad_steps() {
    let dir = TempDir::new().unwrap();
    let base = fs::read_to_string(configs().join("contraction_check.toml")).unwrap().replace("draws = 100000", "draws = 2000");
    let o = run(dir.path(), "contraction-check", &base, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let coarse = base.replace("steps = 1000", "steps = 10");
    let o = run(dir.path(), "contraction-check", &coarse, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("cond_h_T"), "{}", stdout(&o));
}

#[test]
fn usage_errors() {
    let o = bin().arg("sample").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["sample", "--config", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot read"));
    let o = bin().arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
}
