//! Command-line driver: `mfhmc <command> --config <file> [--seed N] [--out DIR] [--threads N]`.
//!
//! Exit codes: 0 success, 1 internal error, 2 config error, 3 failed verdict.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mfhmc::Execution;

pub use config::{ConfigError, RunConfig};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Passed,
    Failed,
}

#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<mfhmc::Error> for Failure {
    fn from(e: mfhmc::Error) -> Self {
        match e {
            mfhmc::Error::InvalidParameter { name, reason } => {
                Self::Config(ConfigError { key: name.to_string(), line: None, message: reason })
            }
            mfhmc::Error::DimensionMismatch { .. } => {
                Self::Config(ConfigError { key: "model".into(), line: None, message: e.to_string() })
            }
            other => Self::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Internal(format!("writing output: {e}"))
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Internal(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mfhmc", version, about = "Unadjusted HMC, couplings and convergence studies for mean-field particle models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; overrides `seed` in the config. Defaults to 42.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for output files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replica threads; 1 runs sequentially, 0 uses every core. Results do
    /// not depend on it.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one unadjusted HMC chain.
    Sample(Common),
    /// Run a coupled pair, and optionally a replicated contraction study.
    Couple(Common),
    /// Print the contraction constants.
    Constants(Common),
    /// Evaluate the step-size and interaction conditions.
    Check(Common),
    /// Strong accuracy order of the Verlet flow.
    OrderStudy(Common),
    /// Bias of ergodic averages across step sizes.
    BiasStudy(Common),
    /// One-step contraction in the concave metric.
    ContractionCheck(Common),
    /// Normality of the coupled velocity marginal.
    MarginalCheck(Common),
}

/// Parses `argv`, runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (handler, common): (fn(&mut commands::Context) -> Result<Status, Failure>, Common) = match cli.command {
        Command::Sample(c) => (commands::sample, c),
        Command::Couple(c) => (commands::couple, c),
        Command::Constants(c) => (commands::constants, c),
        Command::Check(c) => (commands::check, c),
        Command::OrderStudy(c) => (commands::order, c),
        Command::BiasStudy(c) => (commands::bias, c),
        Command::ContractionCheck(c) => (commands::contraction_check, c),
        Command::MarginalCheck(c) => (commands::marginal, c),
    };
    match execute(handler, common) {
        Ok(Status::Passed) => 0,
        Ok(Status::Failed) => 3,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(handler: fn(&mut commands::Context) -> Result<Status, Failure>, common: Common) -> Result<Status, Failure> {
    let cfg = RunConfig::load(&common.config)?;
    let seed = match common.seed {
        Some(s) => s,
        None => cfg.seed()?.unwrap_or(DEFAULT_SEED),
    };
    let out = output::OutputDir::create(&common.out, cfg.hash(), seed)?;
    let execution = Execution::parallel(common.threads);
    let mut ctx = commands::Context { cfg, seed, out, execution };
    handler(&mut ctx)
}
