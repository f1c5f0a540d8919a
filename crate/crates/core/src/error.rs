use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Shapes that must agree do not (dimension, length, window size).
    #[error("structural error: {0}")]
    Structural(String),

    /// A parameter or scenario value is outside its documented range.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown record id {0}")]
    UnknownRecord(u64),

    #[error("replay offset {offset} out of range for trajectory of length {tau}")]
    Range { offset: usize, tau: usize },

    #[error("query error: {0}")]
    Query(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// CLI exit code: 2 for configuration problems, 3 for everything that
    /// went wrong at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Routing(_) => 2,
            _ => 3,
        }
    }
}
