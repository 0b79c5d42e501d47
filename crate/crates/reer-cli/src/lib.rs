//! Library half of the `reer` binary.
//!
//! The binary is a thin wrapper around [`run`]; everything else lives here so
//! that the CSV replay machinery and the subcommand implementations can be
//! exercised directly from tests.

pub mod args;
pub mod commands;
pub mod csvio;

use thiserror::Error;

/// Failures surfaced by any subcommand.
///
/// `Usage` maps to exit code 2, everything else to exit code 1.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] reer_core::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {detail}")]
    MalformedRow { line: u64, detail: String },
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    Run(String),
    #[error("{0}")]
    Usage(String),
}

/// Applies `REER_THREADS` (if set) to the global rayon pool and dispatches
/// the parsed command line.
pub fn run(cli: &args::Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        args::Command::Simulate(a) => commands::cmd_simulate(a),
        args::Command::Stream(a) => commands::cmd_stream(a),
        args::Command::Eval(a) => commands::cmd_eval(a),
    }
}

/// Reads `REER_THREADS` and sizes the global thread pool accordingly.
/// Unset means the default (available parallelism); anything set must be a
/// positive integer.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("REER_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("REER_THREADS must be a positive integer, got '{raw}'")))?;
    // Already-initialized is fine: it only happens when tests call in twice.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
