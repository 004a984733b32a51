mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Radio map estimation experiments.
#[derive(Debug, Parser)]
#[command(name = "radiomap", version)]
pub struct Cli {
    /// Seed for measurement draws and solvers; overrides spec files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Scenario JSON.
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Realize the scenario and write the true map and planned measurements.
    Simulate,
    /// Fit an estimator and report its error against the true map.
    Estimate {
        /// Experiment spec JSON naming the estimator and its parameters.
        #[arg(long)]
        spec: PathBuf,
        /// Measurement CSV to use instead of simulated draws.
        #[arg(long)]
        measurements: Option<PathBuf>,
    },
    /// Uncertainty-driven survey against a boustrophedon sweep.
    Survey {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Decentralized regression by consensus ADMM.
    Admm {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Reproduce a toy figure (fig1..fig5, or all).
    Figures { name: String },
    /// Compare two grid-map CSVs.
    Eval {
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(commands::Outcome::Converged) => ExitCode::SUCCESS,
        Ok(commands::Outcome::NotConverged) => {
            eprintln!("warning: solver did not converge; outputs were written");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
