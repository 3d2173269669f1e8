use anyhow::Result;
use clap::{Parser, Subcommand};
use seqmh_cli::commands::{self, RiskOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Mini-batch approximate Metropolis-Hastings experiments.
///
/// The worker count can be overridden with the SEQMH_WORKERS environment variable.
#[derive(Parser)]
#[command(name = "seqmh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file and print its summary.
    Run { config: PathBuf },
    /// Print DP and simulated error and data usage for the config's test settings.
    Analyze { config: PathBuf },
    /// Choose test parameters that meet an error budget for a set of moment samples.
    Design {
        samples: PathBuf,
        /// Error budget; repeat or comma-separate for several.
        #[arg(long, required = true, value_delimiter = ',')]
        budget: Vec<f64>,
        #[arg(long)]
        grid_size: Option<usize>,
    },
    /// Risk against ground truth for every ensemble of chain traces in a directory.
    Risk {
        trace_dir: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = seqmh_core::risk::DEFAULT_BURN_IN)]
        burn_in: f64,
        /// Measure cost in chain steps instead of likelihood evaluations.
        #[arg(long)]
        by_steps: bool,
    },
}

fn dispatch(cli: Cli) -> Result<seqmh_cli::Table> {
    match cli.command {
        Command::Run { config } => commands::run(&config),
        Command::Analyze { config } => commands::analyze(&config),
        Command::Design { samples, budget, grid_size } => commands::design(&samples, &budget, grid_size),
        Command::Risk { trace_dir, truth, points, burn_in, by_steps } => {
            commands::risk(&trace_dir, &truth, &RiskOptions { points, burn_in, by_steps })
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(table) => {
            print!("{table}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
