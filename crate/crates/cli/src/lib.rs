//! Command-line harness over `mscsa-core`.
//!
//! Each subcommand is a function from parsed arguments to a [`Status`],
//! writing its human- or machine-readable result to a caller-supplied
//! writer so it can be driven in-process as well as from the `mscsa`
//! binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use crate::error::{CliError, Status, EXIT_CHECK_FAILED, EXIT_OK, EXIT_USAGE};
pub use crate::manifest::RunManifest;

/// Environment variable capping internal parallelism.
pub const THREADS_ENV: &str = "MSCSA_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mscsa", version, about = "Multi-stage cross-scale attention harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic MAC and parameter report.
    Report(commands::report::ReportArgs),
    /// Seeded forward pass on a synthetic pyramid.
    Forward(commands::forward::ForwardArgs),
    /// Finite-difference certification of every gradient.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Overfit eight synthetic samples with plain SGD.
    TrainToy(commands::train::TrainArgs),
    /// Compare the key/value downsampling strategies.
    Ablate(commands::ablate::AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    /// Aligned plain-text tables.
    #[default]
    Text,
    /// JSON.
    Structured,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Config file path or bundled name (pvtv2-b1, mini, mini-dense).
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write the result here, with a run manifest next to it.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

impl CommonArgs {
    pub fn load_config(&self, default: &str) -> Result<mscsa_core::MscsaConfig, CliError> {
        config::resolve(self.config.as_deref().unwrap_or(default))
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<Status, CliError> {
    match cli.command {
        Command::Report(a) => commands::report::run(&a, out),
        Command::Forward(a) => commands::forward::run(&a, out),
        Command::Gradcheck(a) => commands::gradcheck::run(&a, out),
        Command::TrainToy(a) => commands::train::run(&a, out),
        Command::Ablate(a) => commands::ablate::run(&a, out),
    }
}

/// Sizes the global thread pool from [`THREADS_ENV`]; unset or 0 keeps the
/// default. Results do not depend on the thread count.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize =
        value.trim().parse().map_err(|_| CliError::Usage(format!("{THREADS_ENV}={value} is not a count")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Writes `text` to `out` and, when requested, to `path` plus its manifest.
pub(crate) fn emit(
    out: &mut dyn Write,
    text: &str,
    path: Option<&Path>,
    manifest: RunManifest,
) -> Result<(), CliError> {
    out.write_all(text.as_bytes())?;
    if let Some(path) = path {
        fs::write(path, text)?;
        manifest.finish(vec![path.to_path_buf()])?;
    }
    Ok(())
}
