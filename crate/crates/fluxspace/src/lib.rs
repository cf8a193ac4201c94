//! Files, settings and the command-line driver for `fluxspace-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod corpus;
pub mod noise;
pub mod ppm;
pub mod settings;

pub use settings::{CorpusSettings, RunConfig, TrainSettings};

/// A failed command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Bad flags, config or inputs (exit 2).
    #[error("{0}")]
    Usage(String),
    /// Non-finite values during training or sampling (exit 3).
    #[error("{0}")]
    Numeric(String),
    /// Reading or writing files (exit 4).
    #[error("{0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl From<fluxspace_core::Error> for Failure {
    fn from(e: fluxspace_core::Error) -> Self {
        match e {
            fluxspace_core::Error::NonFinite { .. } => Failure::Numeric(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

macro_rules! io_failure {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Io(e.to_string())
            }
        }
    )*};
}

io_failure!(
    std::io::Error,
    ppm::PpmError,
    checkpoint::CheckpointError,
    corpus::CorpusError,
    noise::NoiseError
);
