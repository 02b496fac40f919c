use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

use crate::formats::FormatError;

/// Errors surfaced by the command line, each mapped to its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing input {path}: {what}")]
    MissingInput { path: PathBuf, what: String },
    #[error("schema violation in {path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("stage order: `{stage}` needs {needs} (run `{run}` first)")]
    StageOrder { stage: &'static str, needs: String, run: &'static str },
    #[error("format error in {path}: {source}")]
    Format { path: PathBuf, source: FormatError },
    #[error(transparent)]
    Core(#[from] voxcurate_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 usage, 3 missing input, 4 schema, 5 stage order, 6 file format,
    /// 7 algorithm failure, 8 other i/o.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 2,
            Self::MissingInput { .. } => 3,
            Self::Schema { .. } => 4,
            Self::StageOrder { .. } => 5,
            Self::Format { .. } => 6,
            Self::Core(_) => 7,
            Self::Io { .. } => 8,
        }
    }

    pub fn to_exit(&self) -> ExitCode {
        ExitCode::from(self.exit_code())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingInput { path, what: "file not found".into() }
        } else {
            Self::Io { path, source }
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        match source {
            FormatError::Io(e) => Self::io(path, e),
            source => Self::Format { path: path.into(), source },
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Self::Schema { path: path.into(), message: message.to_string() }
    }
}

pub type CliResult<T> = Result<T, CliError>;
