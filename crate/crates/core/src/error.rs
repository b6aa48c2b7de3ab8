use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("argument outside function domain: {0}")]
    Domain(String),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("evaluation point coincides with source point (distance {0:e})")]
    SourceCoincidence(f64),

    #[error("boundary integral system is near-singular (condition estimate {0:e})")]
    NearSingular(f64),

    #[error("aperture not aligned with the direction grid: {0}")]
    Aperture(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Aperture(_) => 2,
            Error::Io(_) | Error::Format(_) => 4,
            _ => 3,
        }
    }
}
