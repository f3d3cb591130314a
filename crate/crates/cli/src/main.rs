mod cache;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Invocation;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "gocleak", version, about = "Goal-oriented scheduling under a timing side channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and store the MPI, PP and PDE policies of every (theta, beta) cell.
    Solve(Common),
    /// Run episodes for every cell, gap and policy kind.
    Simulate(Common),
    /// Sweep ADE thresholds and PDE entropy targets into leakage/reward frontiers.
    Pareto(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides simulation.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of hardware threads.
    #[arg(long)]
    workers: Option<usize>,
}

fn load(common: &Common) -> CliResult<(RunConfig, PathBuf, Vec<u8>)> {
    let (mut config, path, bytes) = match &common.config {
        Some(path) => {
            let (cfg, bytes) = RunConfig::load(path)?;
            (cfg, path.clone(), bytes)
        }
        None => (RunConfig::default(), PathBuf::from("<defaults>"), b"{}".to_vec()),
    };
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    if let Some(seed) = common.seed {
        config.simulation.seed = seed;
    }
    Ok((config, path, bytes))
}

fn run(cli: Cli) -> CliResult<()> {
    let (name, common, exec): (&str, &Common, fn(&Invocation) -> CliResult<()>) = match &cli.command {
        Command::Solve(c) => ("solve", c, commands::solve),
        Command::Simulate(c) => ("simulate", c, commands::simulate),
        Command::Pareto(c) => ("pareto", c, commands::pareto),
    };
    let (config, config_path, config_bytes) = load(common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    let inv = Invocation { command: name, config, config_path, config_bytes };
    pool.install(|| exec(&inv))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gocleak: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
