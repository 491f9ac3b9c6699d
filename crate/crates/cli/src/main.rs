//! `spde`: experiment runner over the simulation kernel. Each subcommand
//! reads a TOML config, applies flag overrides, and writes its artifacts
//! (manifest, reports, tables) into the output directory.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 verification failure (a consistency check disagreed with theory).

mod config;
mod run;

use clap::{Args, Parser, Subcommand};
use config::{ExperimentConfig, Kind, OutputFormat, Overrides};
use spde_core::Error;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "spde", version)]
#[command(about = "Simulation toolkit for parabolic SPDEs driven by spatially homogeneous noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decide the damping condition for a covariance model and cross-check
    /// it against truncated spectral integrals
    Check(CommonArgs),
    /// Sample noise increments and test variance, normality, and the
    /// integral isometry against analytic values
    Noise(CommonArgs),
    /// Run Euler paths of the mild equation and report final-time statistics
    Solve(CommonArgs),
    /// Picard-iterate one noise realization and record the contraction trace
    Picard(CommonArgs),
    /// Factorization round trip: smooth, reconstruct, compare to the direct
    /// stochastic convolution
    Factorize(CommonArgs),
    /// Estimate Holder exponents from increment moments and compare with
    /// the predicted targets
    Regularity(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML experiment configuration
    #[arg(long)]
    config: PathBuf,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo path count override
    #[arg(long)]
    paths: Option<usize>,
    /// Worker thread count override (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory override
    #[arg(long)]
    out: Option<PathBuf>,
    /// Table output format override
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Check(a) => (Kind::Check, a),
        Command::Noise(a) => (Kind::Noise, a),
        Command::Solve(a) => (Kind::Solve, a),
        Command::Picard(a) => (Kind::Picard, a),
        Command::Factorize(a) => (Kind::Factorize, a),
        Command::Regularity(a) => (Kind::Regularity, a),
    };
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed");
            ExitCode::from(4)
        }
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::InvalidParameter(_) | Error::Unsupported(_) => ExitCode::from(2),
                Error::Numerical(_) | Error::Io(_) => ExitCode::from(3),
            }
        }
    }
}

fn execute(kind: Kind, args: CommonArgs) -> spde_core::Result<bool> {
    let file = config::load_config(&args.config)?;
    let over = Overrides {
        seed: args.seed,
        paths: args.paths,
        threads: args.threads,
        out: args.out,
        format: args.format,
    };
    let cfg = ExperimentConfig::assemble(file, kind, over)?;
    let outcome = run::run_experiment(&cfg)?;
    for artifact in &outcome.artifacts {
        println!("{}", artifact.display());
    }
    Ok(!outcome.failed_verification)
}
