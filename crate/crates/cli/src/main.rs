//! `droidlens` command line: synthetic corpora, obfuscation, feature
//! extraction, robustness metrics and detector training.

mod commands;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use droidlens::features::Family;
use droidlens::par::Execution;

use commands::{DataInputs, Run};
use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{}: {1}", .0.display())]
    Io(PathBuf, #[source] std::io::Error),
    #[error("bad input: {0}")]
    Format(String),
    #[error("package {0}: {1}")]
    Package(String, String),
    #[error("obfuscation: {0}")]
    Obfuscation(String),
    #[error("{0}")]
    Analysis(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 3,
            CliError::MissingInput(_) => 4,
            CliError::Io(..) => 5,
            CliError::Format(_) => 6,
            CliError::Package(..) => 7,
            CliError::Obfuscation(_) => 8,
            CliError::Analysis(_) => 9,
        }
    }
}

const EXIT_CODES: &str = "Exit codes:
  0  success
  2  bad command line
  3  invalid configuration
  4  missing input file
  5  write failure
  6  malformed input file
  7  unreadable package
  8  obfuscation failure
  9  analysis failure (training, selection, metrics)";

#[derive(Debug, Parser)]
#[command(name = "droidlens", version, about, after_help = EXIT_CODES)]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed [default: config `seed`, else 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; inputs default to files inside it
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Run single-threaded
    #[arg(long, global = true)]
    sequential: bool,
    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Generate a labeled synthetic corpus of packages
    Gen {
        #[arg(long)]
        n_apps: Option<usize>,
        /// Family recipe, e.g. "permissions+api;strings"
        #[arg(long)]
        recipe: Option<String>,
    },
    /// Produce obfuscated variants of every clean app
    Obfuscate {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        techniques: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        tools: Option<Vec<String>>,
        /// Share of variants whose tool run is simulated as failed
        #[arg(long)]
        failure_rate: Option<f64>,
    },
    /// Derive the obfuscation-success splits from flags.csv
    Split {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        flags: Option<PathBuf>,
    },
    /// Extract raw features from every package in a manifest
    Extract {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Build the feature vocabulary from the clean apps
    Vocab {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Map raw features onto the vocabulary
    Vectorize {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Persistence, overlap and discrepancy of clean/obfuscated pairs
    Metrics {
        #[command(flatten)]
        inputs: DataInputs,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Train a forest on the given families
    Train {
        #[command(flatten)]
        inputs: DataInputs,
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<Family>>,
    },
    /// Evaluate per-family models, or a saved model with --model
    Eval {
        #[command(flatten)]
        inputs: DataInputs,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Per-family prediction agreement between clean and obfuscated apps
    Insens {
        #[command(flatten)]
        inputs: DataInputs,
    },
    /// Select robust families and train the final detector
    Select {
        #[command(flatten)]
        inputs: DataInputs,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = Config::load(cli.config.as_deref())?;
    let exec = if cli.sequential || cfg.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let run = Run {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        cfg,
        out: cli.out,
        exec,
    };
    match cli.cmd {
        Cmd::Gen { n_apps, recipe } => commands::gen(&run, n_apps, recipe.as_deref()),
        Cmd::Obfuscate {
            manifest,
            techniques,
            tools,
            failure_rate,
        } => commands::obfuscate(&run, &manifest, &techniques, &tools, failure_rate),
        Cmd::Split { manifest, flags } => commands::split(&run, &manifest, &flags),
        Cmd::Extract { manifest } => commands::extract(&run, &manifest),
        Cmd::Vocab { features, manifest } => commands::vocab(&run, &features, &manifest),
        Cmd::Vectorize {
            features,
            vocab,
            manifest,
        } => commands::vectorize(&run, &features, &vocab, &manifest),
        Cmd::Metrics { inputs, top_k } => commands::metrics(&run, &inputs, top_k),
        Cmd::Train { inputs, families } => commands::train(&run, &inputs, &families),
        Cmd::Eval { inputs, model } => commands::eval(&run, &inputs, &model),
        Cmd::Insens { inputs } => commands::insens(&run, &inputs),
        Cmd::Select { inputs, threshold } => commands::select(&run, &inputs, threshold),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
