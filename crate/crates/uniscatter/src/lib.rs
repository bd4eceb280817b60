//! Command-line driver for `uniscatter-core`: JSON configs in, CSV and JSON reports out.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use uniscatter_core::Error;

pub use config::{parse_config, parse_str, ConfigErrors, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "uniscatter", version, about = "Stationary scattering for one-dimensional quantum walks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Free band functions, thresholds and spectral arcs.
    Spectrum(Flags),
    /// Resolvent identities, factorization and Parseval checks; exit 0 iff all pass.
    Verify(Flags),
    /// Strong versus stationary wave operators along the ε schedule.
    Waveops(Flags),
    /// S(θ) from both representation formulas and the packet oracle.
    Smatrix(Flags),
    /// Everything above, aggregated into report.json.
    Report(Flags),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Verify(_) => "verify",
            Command::Waveops(_) => "waveops",
            Command::Smatrix(_) => "smatrix",
            Command::Report(_) => "report",
        }
    }

    pub fn flags(&self) -> &Flags {
        match self {
            Command::Spectrum(f) | Command::Verify(f) | Command::Waveops(f) | Command::Smatrix(f) | Command::Report(f) => f,
        }
    }
}

#[derive(clap::Args, Debug, Clone, PartialEq, Eq)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Comma-separated angles overriding run.theta.
    #[arg(long, value_name = "LIST")]
    pub theta: Option<String>,
    /// Output directory overriding run.out.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigErrors),
    Io { path: PathBuf, source: std::io::Error },
    Core(Error),
    /// Checks ran but some failed.
    Failed(Vec<String>),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => core_exit_code(e),
            CliError::Failed(_) => 3,
            CliError::Io { .. } | CliError::Internal(_) => 4,
        }
    }
}

/// 2 for violated preconditions, 3 for numerical failures, 4 otherwise.
pub fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::WrapAround { .. }
        | Error::ThresholdProximity { .. }
        | Error::PacketTooWide(_)
        | Error::DecayViolated { .. }
        | Error::ShortRangeViolated(_)
        | Error::WindowTooSmall(_)
        | Error::InvalidParameter(_) => 2,
        Error::NoConvergence { .. }
        | Error::LimitNotResolved(_)
        | Error::Singular { .. }
        | Error::AtNode { .. }
        | Error::CayleyPhase
        | Error::BranchTracking(_) => 3,
        _ => 4,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "invalid configuration:\n{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Failed(names) => write!(f, "failed checks: {}", names.join(", ")),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<ConfigErrors> for CliError {
    fn from(e: ConfigErrors) -> Self {
        CliError::Config(e)
    }
}

/// Parses `argv` (program name first) and runs the command; returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
