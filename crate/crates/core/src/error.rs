use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mask cell count {n} out of range: must satisfy 0 <= n <= k(k-1) = {max} for k = {k}")]
    MaskCountOutOfRange { k: usize, n: usize, max: usize },

    #[error("invalid penalty matrix: {0}")]
    InvalidPenalty(String),

    #[error("invalid super-class map: {0}")]
    InvalidSuperMap(String),

    #[error("dimension mismatch: expected {expected}, got {actual} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite input in {0}")]
    NonFinite(&'static str),

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at epoch {epoch}, step {step}: non-finite parameters")]
    Diverged { epoch: usize, step: u64 },

    #[error("wrong IDX magic number: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },

    #[error("truncated IDX data: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("image/label count mismatch: {images} images, {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),

    #[error("{0}")]
    Undefined(&'static str),

    #[error("nothing to emit: result set is empty")]
    EmptyResults,

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
