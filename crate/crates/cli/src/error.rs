use std::process::ExitCode;

use ngram_core::Error as CoreError;
use ngram_toymodel::ModelError;
use thiserror::Error;

/// Failures, each mapped to a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2: unreadable or unwritable files, invalid scenarios.
    #[error("{0}")]
    Io(String),
    /// Exit 3: malformed corpus or config text.
    #[error("{0}")]
    Parse(String),
    /// Exit 4: inconsistent configuration, bank or checkpoint.
    #[error("{0}")]
    Config(String),
    /// Exit 5: non-finite values or broken numeric invariants.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Io(_) => 2,
            CliError::Parse(_) => 3,
            CliError::Config(_) => 4,
            CliError::Numeric(_) => 5,
        })
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Io(_) => CliError::Io(msg),
            CoreError::Parse { .. } | CoreError::EmptyCorpus | CoreError::TokenOutOfRange { .. } | CoreError::Json(_) => {
                CliError::Parse(msg)
            }
            CoreError::Config(_)
            | CoreError::Shape(_)
            | CoreError::WindowLength { .. }
            | CoreError::BucketOutOfRange { .. }
            | CoreError::Format(_)
            | CoreError::StaleSnapshot
            | CoreError::ForeignSnapshot => CliError::Config(msg),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Core(c) => c.into(),
            ModelError::Config(m) => CliError::Config(format!("invalid model config: {m}")),
            e @ ModelError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Wraps an I/O error with the path involved.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Converts a core error, naming `path` in I/O failures.
pub fn core_at(path: &std::path::Path) -> impl FnOnce(CoreError) -> CliError + '_ {
    move |e| match e {
        CoreError::Io(io) => CliError::Io(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}

/// Converts a model error, naming `path` in I/O failures.
pub fn model_at(path: &std::path::Path) -> impl FnOnce(ModelError) -> CliError + '_ {
    move |e| match e {
        ModelError::Core(c) => core_at(path)(c),
        other => other.into(),
    }
}
