//! Command-line experiment runner for the `ttmfg` solvers.
//!
//! The binary is a thin wrapper over [`cli::main_with_args`]; every
//! subcommand is also callable as a library function so the acceptance
//! suite and tests can drive it without spawning processes.

pub mod cli;
pub mod config;
pub mod fit;
pub mod report;
pub mod rules;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Solver(#[from] ttmfg::Error),
    #[error("i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const INVARIANT: i32 = 4;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => exit::USAGE,
            _ => exit::FAILURE,
        }
    }
}
