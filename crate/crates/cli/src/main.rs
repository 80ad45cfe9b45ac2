use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

mod commands;
mod config;

use config::Overrides;

/// Effect curves for longitudinal modified treatment policies.
#[derive(Debug, Parser)]
#[command(name = "effect-curve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            output: self.output.clone(),
        }
    }

    fn config(&self) -> Result<&PathBuf> {
        self.config
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("--config is required for this command"))
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate curves on a wide CSV and write results plus plot data.
    Estimate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a simulation study and write metrics and coverage tables.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Replications per setting, overriding the configuration.
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Difference of two curves estimated on the same units.
    Contrast {
        /// Results file of the first curve.
        a: PathBuf,
        /// Results file of the second curve.
        b: PathBuf,
        /// Estimator whose curves are contrasted.
        #[arg(long, default_value = "sdr")]
        estimator: String,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Bootstrap draws.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Dump the long-format data built from the input as CSV.
    Convert {
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Estimate { common } => commands::estimate(common.config()?, &common.overrides()),
        Command::Simulate { common, replications } => {
            commands::simulate(common.config.as_deref(), &common.overrides(), replications)
        }
        Command::Contrast {
            a,
            b,
            estimator,
            alpha,
            draws,
            common,
        } => commands::contrast(&a, &b, &estimator, alpha, draws, &common.overrides()),
        Command::Convert { common } => commands::convert(common.config()?, &common.overrides()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
