use std::path::Path;

use serde_json::json;
use thiserror::Error;

/// Every failure the CLI reports, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input files.
    #[error("{0}")]
    Input(String),
    /// Invalid configuration values or flags.
    #[error("{0}")]
    Config(String),
    /// A chain failed while sampling.
    #[error("{0}")]
    Sampler(String),
    /// Writing outputs failed.
    #[error("{0}")]
    Output(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Config(_) => 3,
            CliError::Sampler(_) => 4,
            CliError::Output(_) => 1,
        }
    }

    /// Stable machine-readable identifier.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input_error",
            CliError::Config(_) => "config_error",
            CliError::Sampler(_) => "sampler_failure",
            CliError::Output(_) => "output_error",
        }
    }

    pub fn report(&self) -> String {
        json!({ "error": { "code": self.code(), "exit_code": self.exit_code(), "message": self.to_string() } })
            .to_string()
    }

    pub fn input_at(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Input(format!("{}: {msg}", path.display()))
    }

    pub fn output_at(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Output(format!("{}: {msg}", path.display()))
    }

    /// Maps a core error raised while fitting; data problems count as input
    /// errors and parameter problems as configuration errors.
    pub fn from_core(e: sfcr_core::Error) -> Self {
        use sfcr_core::Error as E;
        match e {
            E::Sampler { .. } | E::NotPositiveDefinite(_) | E::NonFinite(_) | E::InvalidState(_) => {
                CliError::Sampler(e.to_string())
            }
            E::Argument(_) => CliError::Config(e.to_string()),
            E::Io(_) => CliError::Output(e.to_string()),
            E::Dimension(_) | E::Bounds { .. } | E::Geometry(_) | E::Checkpoint(_) | E::Serde(_) => {
                CliError::Input(e.to_string())
            }
        }
    }
}
