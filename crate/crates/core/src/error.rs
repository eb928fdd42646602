use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {path} at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("join error: {0}")]
    Join(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("intra-view covariance of view {view} is singular (smallest eigenvalue {min_eigenvalue:e}); use a positive ridge")]
    Singular { view: usize, min_eigenvalue: f64 },

    #[error("NDCG undefined: ideal DCG is zero (no relevant candidate)")]
    UndefinedNdcg,

    #[error("no sentence vector for {0:?}")]
    MissingVector(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Contract(_) => ErrorClass::Usage,
            Error::Singular { .. } | Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    /// Short machine-readable tag for error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Validation(_) => "validation",
            Error::Join(_) => "join",
            Error::Format { .. } => "format",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::EmptyInput(_) => "empty_input",
            Error::Singular { .. } => "singular",
            Error::UndefinedNdcg => "undefined_ndcg",
            Error::MissingVector(_) => "missing_vector",
            Error::Numeric(_) => "numeric",
        }
    }
}

/// Converts a serde_json error into a [`Error::Parse`] carrying a byte offset into `text`.
pub(crate) fn json_error(path: impl Into<PathBuf>, text: &str, err: serde_json::Error) -> Error {
    let offset = byte_offset(text, err.line(), err.column());
    Error::Parse {
        path: path.into(),
        offset,
        message: err.to_string(),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}
