//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by probability types, estimators, calibration fitting,
/// and scenario generation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShiftError {
    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, more than {tolerance} away from 1")]
    SumOutOfTolerance { sum: f64, tolerance: f64 },

    #[error("need at least 2 classes, got {0}")]
    DimensionTooSmall(usize),

    #[error("non-finite value at entry {0}")]
    NonFiniteEntry(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("source prior entry {0} is zero")]
    ZeroSourceEntry(usize),

    #[error(
        "prior update normalizer is zero: the target prior has no mass on the posterior's support"
    )]
    DegenerateSupport,

    #[error("row {row}: {source}")]
    Row {
        row: usize,
        #[source]
        source: Box<ShiftError>,
    },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("input is empty")]
    EmptyInput,

    #[error("label {label} at row {row} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("label count {labels} does not match row count {rows}")]
    LabelCountMismatch { labels: usize, rows: usize },

    #[error("validation batch contains fewer than 2 distinct labels")]
    SingleClassBatch,

    #[error("logits contain a non-finite value at row {row}, column {col}")]
    NonFiniteLogits { row: usize, col: usize },

    #[error("this initialization requires a validation posterior matrix")]
    MissingValidation,

    #[error("confusion matrix is numerically singular (condition number {cond:.3e})")]
    SingularConfusion { cond: f64 },

    #[error("no sample reached the confidence threshold tau={tau}; lower tau or supply smoothing")]
    EmptyConfidentSet { tau: f64 },

    #[error("dirichlet concentration must be positive and finite, got {0}")]
    InvalidAlpha(f64),

    #[error("class {0} required by the target prior has no samples in the pool")]
    MissingRequiredClass(usize),

    #[error("class {0} has no validation samples")]
    ClassWithNoValidationSamples(usize),

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

impl ShiftError {
    /// Wrap an error with the index of the batch row it came from.
    pub fn at_row(self, row: usize) -> Self {
        ShiftError::Row {
            row,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, ShiftError>;
