use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which part of an on-disk file failed to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatErrorKind {
    /// Missing or wrong magic token on the first line.
    BadMagic,
    /// Metadata / header contents could not be parsed.
    BadHeader,
    /// A record has the wrong number of fields or an unparsable value.
    BadRecord,
    /// Record dimensions disagree with the declared header.
    DimensionMismatch,
    /// File ended before all declared data was read.
    Truncated,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message} ({kind:?})")]
    Format {
        path: PathBuf,
        line: usize,
        kind: FormatErrorKind,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(
        path: impl Into<PathBuf>,
        line: usize,
        kind: FormatErrorKind,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            path: path.into(),
            line,
            kind,
            message: message.into(),
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// Process exit code for the command-line driver: 3 for numerical failures,
    /// 2 for everything caused by bad input (config, files, dimensions).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}

/// Fails with [`Error::NonFinite`] if any value is NaN or infinite.
pub(crate) fn ensure_finite(values: &[f64], context: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context()))
    }
}
