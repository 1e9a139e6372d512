use std::fmt::Display;
use std::process::ExitCode;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or options.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or unusable input data.
    #[error("{context}: {message}")]
    Data { context: String, message: String },
}

impl CliError {
    pub fn data(context: impl Display, err: impl Display) -> CliError {
        CliError::Data {
            context: context.to_string(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(2),
            CliError::Data { .. } => ExitCode::from(1),
        }
    }

    /// Machine-readable form written to stderr.
    pub fn record(&self) -> serde_json::Value {
        match self {
            CliError::Usage(m) => json!({ "error": "usage", "message": m }),
            CliError::Data { context, message } => {
                json!({ "error": "data", "context": context, "message": message })
            }
        }
    }
}

/// Shorthand for mapping any error into [`CliError::Data`].
pub trait Context<T> {
    fn context(self, what: impl Display) -> Result<T, CliError>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn context(self, what: impl Display) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(what, e))
    }
}
