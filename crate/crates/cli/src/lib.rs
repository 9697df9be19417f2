//! Command-line experiment runner: configuration parsing and the solve /
//! cascade / sweep / oracle-check commands.

use thiserror::Error;

pub mod commands;
pub mod config;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("rate verdict failed")]
    Verdict,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Exit status classes: 2 config/validation, 3 solver, 4 verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Verdict => 4,
            CliError::Io(_) => 1,
        }
    }
}
