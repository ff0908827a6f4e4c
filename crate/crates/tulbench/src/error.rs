//! Crate-wide error type.
//!
//! Ingest treats malformed *lines* as counted rejects, not errors; an `Error`
//! is raised only when a whole operation cannot produce a valid result
//! (unreadable file, reject ratio over threshold, contract violation, ...).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("encoding dimension must be 1, 2 or 3, got {0}")]
    InvalidDimension(usize),

    #[error("cannot encode an empty trajectory")]
    EmptyTrajectory,

    #[error("operation requires dense integer IDs, found raw key {0:?}")]
    NonDenseId(String),

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("k = {k} out of range for {n} training points")]
    KOutOfRange { k: usize, n: usize },

    #[error("coordinate {0} exceeds the 2^63 - 1 limit for exact distance arithmetic")]
    CoordinateOverflow(u64),

    #[error("{rejected} of {total} lines rejected ({ratio:.4}%), over the {threshold:.4}% threshold; first bad lines:\n{sample}")]
    RejectRatio { rejected: u64, total: u64, ratio: f64, threshold: f64, sample: String },

    #[error("corrupt index file: {0}")]
    CorruptIndex(String),

    #[error("label {label} has {count} trajectories, fewer than {n_folds} folds")]
    LabelTooRare { label: u64, count: usize, n_folds: usize },

    #[error("input length mismatch: {0}")]
    LengthMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("requested {requested} users but only {available} available")]
    UserCapTooLarge { requested: usize, available: usize },

    #[error("interval comparison needs one dataset per timescale, missing {0}")]
    MissingTimescale(&'static str),

    #[error("{0}")]
    InvalidInput(String),
}
