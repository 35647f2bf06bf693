use std::io;

use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Every variant maps to a short machine-readable class (see [`Error::class`])
/// that the command-line front end prints as a prefix.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),

    #[error("{0}")]
    Format(String),

    #[error("expected {expected} bytes of frame data, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("{0}")]
    Argument(String),

    #[error("degenerate warp: {0}")]
    Degeneracy(String),

    #[error("insufficient valid overlap: {0}")]
    Overlap(String),

    #[error("{0}")]
    Simulation(String),

    #[error("group starting at frame {start} produced no valid pixels")]
    EmptyMerge { start: usize },

    #[error("{0}")]
    Pipeline(String),

    #[error("{0}")]
    Render(String),

    #[error("line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Evaluation(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::LengthMismatch { .. } => "length",
            Error::Argument(_) => "argument",
            Error::Degeneracy(_) => "degeneracy",
            Error::Overlap(_) => "overlap",
            Error::Simulation(_) => "simulation",
            Error::EmptyMerge { .. } => "empty_merge",
            Error::Pipeline(_) => "pipeline",
            Error::Render(_) => "render",
            Error::Config { .. } => "config",
            Error::Evaluation(_) => "evaluation",
            Error::Image(_) => "image",
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degeneracy(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
