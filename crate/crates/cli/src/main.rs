//! `wordaad`: synthesize, preprocess, augment, train and evaluate.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 training divergence.

mod commands;
mod config;
mod provenance;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wordaad::data::Paradigm;
use wordaad::eval::Variant;

use crate::commands::ComparisonSpec;
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<wordaad::Error> for CliError {
    fn from(e: wordaad::Error) -> Self {
        match e {
            wordaad::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| format!("unknown variant {s:?}; expected one of {}", Variant::ALL.map(|v| v.name()).join(", ")))
}

#[derive(Debug, Parser)]
#[command(name = "wordaad", version, about = "Single-word auditory attention decoding pipeline")]
struct Cli {
    /// TOML configuration; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the surrogate cohort.
    Synth {
        /// Write raw 1000 Hz recordings instead of epochs.
        #[arg(long)]
        continuous: bool,
    },
    /// Filter, resample, epoch and reject raw recordings.
    Preprocess {
        /// Recording files or directories of them.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
    /// Build the upsampled and simulated sets from original epochs.
    Augment {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
    /// Run the configured validation scheme and variants.
    TrainEval {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
    },
    /// Paired permutation tests on a report; the declared set by default.
    Compare {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long, value_parser = parse_variant, requires = "b")]
        a: Option<Variant>,
        #[arg(long, value_parser = parse_variant, requires = "a")]
        b: Option<Variant>,
        /// Restrict to one paradigm (P1, P2, P3); all paradigms pooled otherwise.
        #[arg(long)]
        paradigm: Option<Paradigm>,
    },
    /// Merge reports into one summary and results table.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
    },
}

fn configure_threads(jobs: usize) -> Result<(), CliError> {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} worker threads: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    if jobs > 1 {
        eprintln!("wordaad: built without the `parallel` feature; --jobs {jobs} runs sequentially");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    let seed = cfg.seed(cli.seed)?;
    configure_threads(cli.jobs)?;
    let out = &cli.out;
    let outputs = match &cli.command {
        Command::Synth { continuous } => commands::synth(&cfg, seed, out, *continuous)?,
        Command::Preprocess { input } => commands::preprocess_cmd(&cfg, seed, input, out)?,
        Command::Augment { input } => commands::augment(&cfg, seed, input, out)?,
        Command::TrainEval { input } => commands::train_eval(&cfg, seed, input, out)?,
        Command::Compare { input, a, b, paradigm } => {
            let spec = ComparisonSpec { a: *a, b: *b, paradigm: *paradigm };
            commands::compare_cmd(&cfg, seed, input, &spec, out)?
        }
        Command::Report { input } => commands::report_cmd(&cfg, seed, input, out)?,
    };
    for p in outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wordaad: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
