//! HTTP facade and command-line front end for `ecbw-core`.

pub mod api;
pub mod cli;
pub mod config;

use thiserror::Error;

/// Failures surfaced by the `ecbw` binary.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}
