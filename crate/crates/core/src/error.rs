//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A hyperparameter or constructor argument violated its contract.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Runtime inputs (shapes, label encodings) violated a precondition.
    #[error("invalid input: {0}")]
    Input(String),

    /// An index was out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A dataset file had the wrong magic number.
    #[error("bad IDX magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },

    /// A dataset file ended before its declared payload.
    #[error("truncated IDX file {path}: expected {expected} payload bytes, found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },

    /// Image and label files disagree on the number of items.
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    /// A label byte fell outside the declared class range.
    #[error("label {label} at item {item} outside class range 0..{classes}")]
    LabelOutOfRange {
        item: usize,
        label: usize,
        classes: usize,
    },

    /// A per-class subset asked for more samples than a class has.
    #[error("class {class} has only {have} samples, need {need}")]
    InsufficientClassSamples {
        class: usize,
        have: usize,
        need: usize,
    },

    /// API misuse, e.g. a backward pass with a stale forward cache.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite loss and aborted.
    #[error("numerical abort: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
