//! Command-line front end: data preparation, training, explanation and the
//! incremental-learning experiment harness, driven by a JSON config with
//! flag overrides (flags win).
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
//! Failures print a single machine-readable JSON line on stderr.

mod commands;
mod config;

pub use config::{ConfigError, RunConfig};

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "limetrain",
    about = "Explanation-weighted incremental training for spectrogram classifiers",
    version
)]
struct Cli {
    /// Master seed; overrides the config value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config value.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read a WAV manifest, normalize and transform clips, write a cache.
    PrepareData {
        #[command(flatten)]
        config: ConfigArg,
        /// Cache file to write (default: <out_dir>/prepared.spc).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic spectrogram dataset and write a cache.
    GenSynthetic {
        #[command(flatten)]
        config: ConfigArg,
        /// Cache file to write (default: <out_dir>/synthetic.spc).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the initial model on the speaker-disjoint training split.
    TrainInitial {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Explain one sample: per-segment scores as CSV, optional top-k mask.
    Explain {
        #[command(flatten)]
        config: ConfigArg,
        /// Checkpoint file with the model to explain.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample index into the loaded dataset.
        #[arg(long)]
        index: usize,
        /// Class to explain (default: the model's predicted class).
        #[arg(long)]
        class: Option<usize>,
        /// Also emit a PGM mask of the k highest-scoring segments.
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Run the full incremental procedure and write the session ledger.
    RunIncremental {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        metric: Option<String>,
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Run one incremental experiment per lambda and write the sweep matrix.
    SweepLambda {
        #[command(flatten)]
        config: ConfigArg,
        /// Comma-separated lambda values, e.g. `0,1,100`.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        #[arg(long)]
        sessions: Option<usize>,
    },
    /// Evaluate a checkpoint on the test split; writes the confusion matrix.
    Eval {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Errors carrying their exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Run(_) => "run",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Run(_) => 1,
        }
    }
}

/// Run the CLI on explicit argv (excluding or including the program name;
/// clap expects it first, so callers pass e.g. `["limetrain", "eval", ...]`).
pub fn dispatch<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(err) => {
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    0
                }
                _ => {
                    eprint!("{err}");
                    2
                }
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!(
                "{}",
                serde_json::json!({"error": {"kind": err.kind(), "message": err.to_string()}})
            );
            err.exit_code()
        }
    }
}
