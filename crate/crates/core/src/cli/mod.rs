//! Command-line experiment runner.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;
pub use commands::{cmd_compare, cmd_eval, cmd_fit, cmd_gen};
pub use config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "SSMRF_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ssmrf", version, about = "Bayesian structure learning for sparse binary Markov random fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the seed the command consumes: `data.seed` for gen,
    /// `sampler.seed` for fit, `eval.seed` for eval.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the ground truth and the train/test sets.
    Gen(CommonArgs),
    /// Run the configured method and write samples, summaries and sweeps.
    Fit(CommonArgs),
    /// Compute metrics, precision-recall curves and autocorrelations.
    Eval(CommonArgs),
    /// Merge sweep results of several methods into plot-ready tables.
    Compare(CommonArgs),
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) | Error::EmptyPreconditioner => EXIT_NUMERIC,
        Error::Io(_) | Error::Parse { .. } | Error::Json(_) | Error::Empty(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    // a pool may already exist when called more than once in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(command: Command) -> Result<(), Error> {
    configure_threads()?;
    let (args, which) = match command {
        Command::Gen(a) => (a, "gen"),
        Command::Fit(a) => (a, "fit"),
        Command::Eval(a) => (a, "eval"),
        Command::Compare(a) => (a, "compare"),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        match which {
            "gen" => cfg.data.seed = seed,
            "fit" => cfg.sampler.seed = seed,
            "eval" => cfg.eval.seed = seed,
            _ => {}
        }
    }
    let out = args.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone());
    match which {
        "gen" => cmd_gen(&cfg, &out),
        "fit" => cmd_fit(&cfg, &out),
        "eval" => cmd_eval(&cfg, &out),
        _ => cmd_compare(&cfg, &out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
