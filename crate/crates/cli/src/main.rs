//! `pcs` — synthetic data, relevance profiles, curriculum training,
//! evaluation and analysis exports.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pcs_core::PcsError;

use crate::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "pcs", version, about = "Progressive code-switching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Config overrides as `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multilingual task into `data_dir`.
    Synth(Common),
    /// Pre-train the measurer and cache relevance profiles.
    Measure(Common),
    /// Train one mode for every seed.
    Train(Common),
    /// Accuracy table for checkpoints on the test sets.
    Eval(Common),
    /// Similarity, embedding and learning-curve exports.
    Export(Common),
    /// Train every mode in `modes` for every seed.
    Ablate(Common),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(PcsError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                PcsError::Config(_) | PcsError::Domain(_) => 2,
                PcsError::Training(_) | PcsError::Numeric(_) => 4,
                _ => 3,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e @ (PcsError::Config(_) | PcsError::Domain(_))) => write!(f, "config error: {e}"),
            CliError::Core(e @ (PcsError::Training(_) | PcsError::Numeric(_))) => write!(f, "training error: {e}"),
            CliError::Core(e) => write!(f, "data error: {e}"),
        }
    }
}

impl From<PcsError> for CliError {
    fn from(e: PcsError) -> Self {
        CliError::Core(e)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, cmd): (&Common, fn(&ExperimentConfig) -> Result<(), CliError>) = match &cli.command {
        Command::Synth(c) => (c, commands::synth),
        Command::Measure(c) => (c, commands::measure),
        Command::Train(c) => (c, commands::train),
        Command::Eval(c) => (c, commands::eval),
        Command::Export(c) => (c, commands::export),
        Command::Ablate(c) => (c, commands::ablate),
    };
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    cfg.apply_flags(&common.overrides)?;
    cfg.validate()?;
    cmd(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pcs: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
