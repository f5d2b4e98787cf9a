//! Command-line driver: data generation, training, evaluation, ablations
//! and remix success-probability tables.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime abort.

mod commands;
pub mod config;
pub mod grid;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hiermil::data::Split;

pub use config::{Ablation, RunConfig};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Runtime(m) => write!(f, "aborted: {m}"),
        }
    }
}

impl From<hiermil::Error> for CliError {
    fn from(e: hiermil::Error) -> Self {
        use hiermil::Error::*;
        match e {
            Config(_) | InvalidArgument(_) | Stratification(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hiermil", version, about = "Priority-aware hierarchical MIL experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct AblationFlags {
    #[arg(long)]
    pub no_iha: bool,
    #[arg(long)]
    pub no_uhd: bool,
    #[arg(long)]
    pub no_subsite: bool,
    #[arg(long)]
    pub no_remix: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with train/val/test and mixed test splits.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a dataset manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest.
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// Run one training per seed, each in its own subdirectory.
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[command(flatten)]
        flags: AblationFlags,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        /// train, val, test or test-mixed.
        #[arg(long, value_name = "NAME", default_value = "test", value_parser = parse_split)]
        split: Split,
        #[arg(long)]
        no_subsite: bool,
    },
    /// Tabulate the chance that a remix keeps an urgent symptom.
    RemixProb {
        #[command(flatten)]
        common: Common,
        /// Bag sizes; defaults to the median, mean and max of --data.
        #[arg(long = "n", value_name = "LIST", value_delimiter = ',')]
        n: Vec<usize>,
        /// Comma list or start:stop:step.
        #[arg(long, value_name = "GRID", default_value = "0.05:0.5:0.05")]
        alpha: String,
        #[arg(long, value_name = "GRID", default_value = "0.4:0.8:0.05")]
        beta: String,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0.99)]
        threshold: f64,
    },
    /// Train the full model and each single-component ablation.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        data: Option<PathBuf>,
        #[arg(long, value_name = "LIST", value_delimiter = ',')]
        seeds: Vec<u64>,
    },
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("{e}");
        return e.exit_code();
    }
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Honors `HIERMIL_THREADS` as a cap on evaluation parallelism.
fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("HIERMIL_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HIERMIL_THREADS must be a positive integer, got {v:?}")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
