//! `sddelab`: run simulations and density-bound verifications from a config file.
//!
//! Exit status is 0 when every check passes, 1 when any check is violated
//! and 2 on usage, configuration or input errors.

mod commands;
mod config;
mod output;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("output: {0}")]
    Io(String),
    #[error("{0}")]
    Pipeline(String),
}

#[derive(Parser, Debug)]
#[command(
    name = "sddelab",
    version,
    about = "Delay equations driven by fractional Brownian motion: simulation and density-bound checks"
)]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the H-space norm inequality and the block double-integral identity.
    CheckLemmas(LemmaArgs),
    /// Simulate solution paths; checks fBm covariance and early derivative bounds.
    Simulate(RunArgs),
    /// Estimate g_F on the early regime.
    Gf(RunArgs),
    /// Density from g_F next to a kernel estimate and the early bounds.
    Density(RunArgs),
    /// Verify the early two-sided Gaussian bound.
    VerifyEarly(RunArgs),
    /// Verify late positivity, the J1 bracket, remainder and non-degeneracy.
    VerifyLate(RunArgs),
    /// Constants, feasibility and lower bound of the chaining argument.
    KhConstants(RunArgs),
}

#[derive(Args, Debug)]
struct LemmaArgs {
    #[arg(long = "h", default_value_t = 0.75)]
    hurst: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Configuration file.
    pub config: PathBuf,
    /// Override a config entry, e.g. `--set simulation.paths=5000`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides the config and SDDELAB_OUT).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation time.
    #[arg(long)]
    pub t: Option<f64>,
    /// Target point (kh-constants).
    #[arg(long)]
    pub x: Option<f64>,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::CheckLemmas(a) => commands::check_lemmas(a.hurst, a.trials, a.tol, a.seed),
        Command::Simulate(a) => commands::run(commands::Kind::Simulate, &a),
        Command::Gf(a) => commands::run(commands::Kind::Gf, &a),
        Command::Density(a) => commands::run(commands::Kind::Density, &a),
        Command::VerifyEarly(a) => commands::run(commands::Kind::VerifyEarly, &a),
        Command::VerifyLate(a) => commands::run(commands::Kind::VerifyLate, &a),
        Command::KhConstants(a) => commands::run(commands::Kind::KhConstants, &a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
