use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: unsupported or malformed image: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("expected {expected}-channel input, got {got} channel(s)")]
    Channel { expected: usize, got: usize },

    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    Dimension {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate region: level set is entirely {}", if *.all_inside { "inside" } else { "outside" })]
    DegenerateRegion { all_inside: bool },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Channel { .. } => 1,
            Error::Io { .. } | Error::Format { .. } => 2,
            Error::Dimension { .. } => 3,
            // a degenerate snake run is reported, not fatal
            Error::DegenerateRegion { .. } => 0,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
