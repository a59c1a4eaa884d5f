use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, ArmlError>;

#[derive(Debug, Error)]
pub enum ArmlError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not enough instances: need {needed}, have {available} ({context})")]
    NotEnoughInstances {
        needed: usize,
        available: usize,
        context: &'static str,
    },

    #[error("metric file: {0}")]
    MetricFormat(String),

    #[error("quadratic program unbounded along coordinate {coordinate}")]
    UnboundedQp { coordinate: usize },

    #[error("non-finite value at epoch {epoch}, instance {instance}")]
    NonFinite { epoch: usize, instance: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}
