use std::path::PathBuf;

use thiserror::Error;

use crate::axmult::ID_GRAMMAR;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid multiplier id `{id}`: {reason} (expected {ID_GRAMMAR})")]
    MultiplierId { id: String, reason: String },

    #[error("invalid multiplier configuration: {0}")]
    InvalidSpec(String),

    #[error("{}: lookup table malformed at byte offset {offset}: {reason}", path.display())]
    TableFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("no energy entry for multiplier `{0}`")]
    MissingEnergy(String),

    #[error("energy table line {line}: {reason}")]
    EnergyTable { line: usize, reason: String },

    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("plan: {0}")]
    Plan(String),

    /// Plan, model and dataset disagree with each other.
    #[error("input mismatch: {0}")]
    Mismatch(String),

    #[error("model: {0}")]
    Model(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("design space: {0}")]
    Space(String),

    #[error("design space holds {size} plans, above the exhaustive cap of {cap}; use nsga2 mode")]
    SpaceTooLarge { size: u128, cap: u128 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
