use std::path::PathBuf;

/// Crate-wide error type. Every variant maps onto a stable one-word (or
/// hyphenated) code used by the CLI for machine-parsable diagnostics, plus a
/// process exit code: 2 usage, 3 data format, 4 numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    InvalidInput(String),

    #[error("{0}")]
    InvalidState(String),

    /// Structured file (session/weight/config/ground-truth) violated its
    /// format. `offset` is the byte position at which decoding failed.
    #[error("{path}: {detail} (byte {offset})")]
    Format {
        path: String,
        offset: u64,
        detail: String,
    },

    #[error("{0}")]
    Numerical(String),

    /// A required input artifact is absent; `code` names which one.
    #[error("{msg}")]
    MissingInput { code: &'static str, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn format(path: impl Into<String>, offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-parsable code for CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidState(_) => "invalid-state",
            Error::Format { .. } => "data-format",
            Error::Numerical(_) => "numerical-failure",
            Error::MissingInput { code, .. } => code,
            Error::Io { source, .. } => match source.kind() {
                std::io::ErrorKind::NotFound => "file-missing",
                _ => "io",
            },
        }
    }

    /// Process exit code: 2 usage error, 3 data-format error, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::InvalidState(_) | Error::MissingInput { .. } => 2,
            Error::Format { .. } => 3,
            Error::Numerical(_) => 4,
            Error::Io { source, .. } => match source.kind() {
                std::io::ErrorKind::NotFound => 2,
                _ => 3,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
