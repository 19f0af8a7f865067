use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error at byte offset {offset}: {source}")]
    Io {
        offset: u64,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("payload length mismatch: header declares {expected} samples, found {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("index out of bounds: {what} = {index}, limit {limit}")]
    Bounds {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("simulation diverged at step {step} (|w| = {magnitude:e})")]
    Divergence { step: usize, magnitude: f64 },

    #[error("velocity estimation failed: {0}")]
    Velocity(String),

    #[error("no signal: {0}")]
    NoSignal(String),

    #[error("windowing produced no active regions")]
    EmptyWindowing,

    #[error("rank {rank} outside 1..={max}")]
    Rank { rank: usize, max: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("mask error: {0}")]
    Mask(String),

    #[error("degenerate singular spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("config error at line {line}, column {column}: {message}")]
    Config {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),
}

impl Error {
    pub(crate) fn config(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Config {
            line,
            column,
            message: message.into(),
        }
    }
}
