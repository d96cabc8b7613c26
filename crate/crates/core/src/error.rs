use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("join error: {0}")]
    Join(String),
    #[error("unsupported structure: {0}")]
    Unsupported(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("empty data: {0}")]
    Empty(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Model(_) | Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
