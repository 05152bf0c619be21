use anyhow::Result;
use clap::{Parser, Subcommand};
use ssd_cli::commands::{self, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulation-based sample size determination that is robust over a set of
/// data-generating scenarios.
#[derive(Parser)]
#[command(name = "robust-ssd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Study configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed (at most 2^63 - 1, the TOML integer range).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
    seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Recommend a sample size from two simulated sample sizes per scenario.
    Run,
    /// Simulate power independently at every point of the configured grid.
    Sweep,
    /// Tabulate finite-difference logit slopes of the proxy p-value.
    ProxyVerify {
        /// Comma-separated increasing sample sizes.
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<f64>>,
    },
    /// Check a configuration without simulating.
    Validate,
}

fn require(config: Option<PathBuf>) -> Result<PathBuf> {
    config.ok_or_else(|| anyhow::anyhow!("--config <FILE> is required for this subcommand"))
}

fn dispatch(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Run => {
            for p in commands::run(&require(cli.config)?, &overrides)? {
                println!("{}", p.display());
            }
        }
        Command::Sweep => {
            for p in commands::sweep(&require(cli.config)?, &overrides)? {
                println!("{}", p.display());
            }
        }
        Command::ProxyVerify { n_grid } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from(ssd_cli::config::DEFAULT_OUTPUT_DIR));
            for p in commands::proxy_verify(&out, n_grid.as_deref())? {
                println!("{}", p.display());
            }
        }
        Command::Validate => {
            for line in commands::validate(&require(cli.config)?, &overrides)? {
                println!("{line}");
            }
            println!("configuration is valid");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
