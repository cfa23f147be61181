//! Batch driver behind the `jlsgev` binary: simulate, fit, predict, score
//! and sweep. Every command reads a JSON configuration or flags, writes its
//! resolved configuration next to its outputs, and is deterministic in its
//! inputs and seed.

pub mod commands;
pub mod config;

use std::fmt;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const CONVERGENCE: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    /// Outputs were written but at least one R̂ exceeds the limit.
    Unconverged(String),
    Io(String),
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => exit::VALIDATION,
            CliError::Unconverged(_) => exit::CONVERGENCE,
            CliError::Io(_) => exit::IO,
            CliError::Failed(_) => exit::FAILURE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Unconverged(m) => write!(f, "not converged: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<jlsgev::Error> for CliError {
    fn from(e: jlsgev::Error) -> Self {
        use jlsgev::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Parse { .. } | E::Csv(_) => CliError::Io(msg),
            E::Validation(_) | E::Json(_) | E::DimensionMismatch(_) | E::Alignment(_) | E::EmptyAfterFilter(_) => {
                CliError::Validation(msg)
            }
            _ => CliError::Failed(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}
