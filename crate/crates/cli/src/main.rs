//! `sct`: simulate, reconstruct, inspect and validate self-calibrating tomography runs.
//!
//! Exit codes: 0 ok, 1 other failure, 2 parse or schema error, 3 dimension
//! mismatch, 4 no convergence (result still written), 5 fingerprint mismatch.

mod commands;
mod error;
mod schema;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sct_core::criteria::Suite;
use sct_core::invert::Objective;

/// Seed of `validate` when none is given.
const DEFAULT_VALIDATE_SEED: u64 = 20240601;

#[derive(Parser)]
#[command(name = "sct", version, about = "Self-calibrating tomography for qubits and V-type qutrits")]
struct Cli {
    /// Overrides SCT_SEED and any seed in a config file.
    #[arg(long, global = true, env = "SCT_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    #[value(name = "least_squares", alias = "least-squares")]
    LeastSquares,
    #[value(name = "poisson_mle", alias = "poisson-mle")]
    PoissonMle,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the statistics of an experiment file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the state and process unknowns from a counts file.
    Reconstruct {
        #[arg(long)]
        counts: PathBuf,
        /// Scenario name (A, B, C, C-alt, V) or protocol file.
        #[arg(long)]
        protocol: String,
        #[arg(long, value_enum, default_value = "least_squares")]
        objective: ObjectiveArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print |det|, smallest singular value and condition number of the Jacobian.
    Jacobian {
        #[arg(long)]
        protocol: String,
        /// Point file; a seeded generic point when omitted.
        #[arg(long)]
        point: Option<PathBuf>,
        /// Also print the near-zero mask of the matrix.
        #[arg(long)]
        pattern: bool,
    },
    /// Scan |det| over a grid of one or more unknowns and write CSV.
    Sweep {
        #[arg(long)]
        protocol: String,
        /// NAME or NAME:LO:HI; repeat for more axes.
        #[arg(long, required = true)]
        axis: Vec<String>,
        #[arg(long, default_value_t = 64)]
        grid: usize,
        #[arg(long)]
        point: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the acceptance criteria.
    Validate {
        #[arg(long, value_enum, default_value = "quick")]
        suite: SuiteArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let outcome = match cli.command {
        Command::Simulate { config, out } => commands::simulate(&config, &out, cli.seed, &mut stdout),
        Command::Reconstruct { counts, protocol, objective, out } => {
            let objective = match objective {
                ObjectiveArg::LeastSquares => Objective::LeastSquares,
                ObjectiveArg::PoissonMle => Objective::PoissonMle,
            };
            commands::reconstruct_cmd(&counts, &protocol, objective, &out, cli.seed, &mut stdout)
        }
        Command::Jacobian { protocol, point, pattern } => {
            commands::jacobian(&protocol, point.as_deref(), pattern, cli.seed.unwrap_or(0), &mut stdout)
        }
        Command::Sweep { protocol, axis, grid, point, out } => {
            commands::sweep(&protocol, &axis, grid, point.as_deref(), &out, cli.seed.unwrap_or(0))
        }
        Command::Validate { suite } => {
            let suite = match suite {
                SuiteArg::Quick => Suite::Quick,
                SuiteArg::Full => Suite::Full,
            };
            let passed = commands::validate(suite, cli.seed.unwrap_or(DEFAULT_VALIDATE_SEED), &mut stdout);
            return if passed { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sct: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
