//! `cifbm`: coordinate and Fisher inspection, training runs, experiment
//! grids and sample ingestion.

mod coords;
mod experiment;
mod fisher;
mod ingest;
mod io;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Exit status for unreadable or invalid input.
pub const EXIT_INVALID: u8 = 2;
/// Exit status when training diverged; artifacts are still written.
pub const EXIT_DIVERGED: u8 = 3;
/// Exit status when every trial of an experiment failed.
pub const EXIT_ALL_FAILED: u8 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "cifbm",
    version,
    about = "Information geometry and Boltzmann-machine training for binary data"
)]
pub struct Cli {
    /// Seed override: trainer seed for `train`, master seed for `experiment`,
    /// draw seed for `--random` inputs.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for `experiment` (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Output directory (`ingest`: output file).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum System {
    P,
    Eta,
    Theta,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Sbm,
    Rbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ml,
    Cd1,
    Cdcif,
    Ip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Lines01,
    Csv,
}

/// A distribution file, or a seeded uniform draw over `2^n` states.
#[derive(Debug, clap::Args)]
#[group(required = true, multiple = false)]
pub struct Input {
    /// Distribution JSON `{ "n": .., "p": [..] }`.
    pub input: Option<PathBuf>,
    /// Draw a random distribution over `n` variables instead.
    #[arg(long, value_name = "N")]
    pub random: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a distribution in p, η, θ or l-mixed coordinates.
    Coords {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        system: System,
        /// Mixing order for `--system mixed`.
        #[arg(long)]
        l: Option<usize>,
    },
    /// Print a Fisher information matrix or its information ratios.
    Fisher {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        system: System,
        /// Order: the mixing order, or the kept order for `--ratios`.
        #[arg(long)]
        l: Option<usize>,
        /// Print the lost-information and tail-to-kept ratios.
        #[arg(long)]
        ratios: bool,
        /// Also compare against the finite-difference score oracle.
        #[arg(long)]
        oracle: bool,
    },
    /// Train one model on a sample file.
    Train {
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Sample file (`lines01`).
        #[arg(long)]
        data: PathBuf,
        /// Flat JSON training configuration.
        #[arg(long)]
        config: PathBuf,
        /// Optional true distribution for KL traces.
        #[arg(long)]
        target: Option<PathBuf>,
    },
    /// Run an experiment grid.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Use only the first K targets of the grid.
        #[arg(long, value_name = "K")]
        targets: Option<usize>,
        /// Use only the first R repeats of each cell.
        #[arg(long, value_name = "R")]
        repeats: Option<usize>,
    },
    /// Normalize a binary matrix into a sample file.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "lines01")]
        format: Format,
    },
}

/// Error carrying the process exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_INVALID,
            error: error.into(),
        }
    }

    pub fn other(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 1,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::other(error)
    }
}

/// Maps core errors on user input to exit status 2.
pub fn input_error(e: cifbm_core::Error) -> Failure {
    use cifbm_core::Error as E;
    match e {
        E::Io(_) | E::Diverged { .. } | E::NoConvergence { .. } => Failure::other(e),
        _ => Failure::invalid(e),
    }
}

pub type CmdResult = std::result::Result<u8, Failure>;

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Coords { input, system, l } => coords::run(cli, input, *system, *l),
        Command::Fisher {
            input,
            system,
            l,
            ratios,
            oracle,
        } => fisher::run(cli, input, *system, *l, *ratios, *oracle),
        Command::Train {
            model,
            method,
            data,
            config,
            target,
        } => train::run(cli, *model, *method, data, config, target.as_deref()),
        Command::Experiment {
            spec,
            targets,
            repeats,
        } => experiment::run(cli, spec, *targets, *repeats),
        Command::Ingest { input, format } => ingest::run(cli, input, *format),
    }
}

fn main() -> ExitCode {
    // Exit quietly when stdout is closed early, e.g. piped into `head`.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
