mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "iwan", version, about = "Weak adversarial solver for inverse conductivity problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Concurrent runs.
    #[arg(long, env = "IWAN_WORKERS", default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Run one solve.
    Solve(RunArgs),
    /// Run the Cartesian product of the configured sweep axes.
    Sweep(RunArgs),
    /// Compare the finite-difference baseline against a matched-budget solve.
    FdmCompare(RunArgs),
    /// List the problem catalog.
    Problems,
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Problems => {
            commands::problems();
            Ok(true)
        }
        Command::Solve(a) => commands::solve(config::load(&a.config)?, a.seed, a.out).map(|_| true),
        Command::Sweep(a) => commands::sweep(config::load(&a.config)?, a.seed, a.out, a.workers),
        Command::FdmCompare(a) => commands::fdm_compare(config::load(&a.config)?, a.seed, a.out, a.workers),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
