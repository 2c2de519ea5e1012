//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by estimation, stratification, and experiment plumbing.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A simulation returned a non-finite loss for the given sample index.
    #[error("evaluation failure at sample index {index}: loss is not finite")]
    EvaluationFailure { index: usize },

    /// An estimator could not be formed (e.g. an unmergeable empty structure).
    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    /// Regression covariate is constant; no linear fit exists.
    #[error("degenerate covariate: {0}")]
    DegenerateCovariate(String),

    /// All strata report zero standard deviation; optimal weights undefined.
    #[error("degenerate allocation: all stratum standard deviations are zero")]
    DegenerateAllocation,

    /// No stratum is eligible for selective randomized allocation.
    #[error("allocation exhausted: no stratum satisfies the eligibility indicator")]
    AllocationExhausted,

    /// Boundary iteration left an interval persistently empty.
    #[error("degenerate boundaries: {0}")]
    BoundaryDegenerate(String),

    /// A tree split would produce a child too small to carry statistics.
    #[error("invalid split: {0}")]
    InvalidSplit(String),

    /// Experiment configuration rejected at startup.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
