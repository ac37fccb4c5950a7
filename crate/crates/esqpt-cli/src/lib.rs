//! Experiment runner for the charge diagnostic: config parsing, built-in
//! presets, sweep execution, and deterministic file emission.

use std::fmt;

use esqpt_core::error::CoreError;

pub mod config;
pub mod output;
pub mod presets;
pub mod runner;

/// Failure classes mapped one-to-one onto process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or a config that fails parsing/validation (exit 1).
    Config(String),
    /// The computation itself failed, e.g. non-convergence (exit 2).
    Numeric(String),
    /// Reading or writing result files failed (exit 3).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        if e.is_input_error() {
            CliError::Config(e.to_string())
        } else if e.is_io_error() {
            CliError::Io(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}
