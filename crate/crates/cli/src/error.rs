//! Failure kinds and their exit codes.

use std::path::{Path, PathBuf};

use apr_core::agents::dp::DpError;
use apr_core::agents::ppo::PpoError;
use apr_core::fit::FitError;
use apr_core::llm::LlmError;
use apr_core::metrics::MetricsError;
use apr_core::store::StoreError;
use thiserror::Error;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Usage(String),
    /// Input data that is missing, malformed or inconsistent.
    #[error("{0}")]
    Data(String),
    /// An optimizer or trainer produced non-finite or no usable result.
    #[error("{0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Io { .. } => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DpError> for CliError {
    fn from(e: DpError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::Config(_) => CliError::Usage(e.to_string()),
            FitError::Diverged { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PpoError> for CliError {
    fn from(e: PpoError) -> Self {
        match e {
            PpoError::NonFinite { .. } => CliError::Numeric(e.to_string()),
            PpoError::Config(_) | PpoError::Env(_) => CliError::Usage(e.to_string()),
            PpoError::Checkpoint(_) | PpoError::Shape { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Template(_) | LlmError::Config(_) | LlmError::Env(_) => CliError::Usage(e.to_string()),
            LlmError::Store(_) | LlmError::Io { .. } => CliError::Data(e.to_string()),
        }
    }
}
