//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by dataset construction, estimation, and selection.
#[derive(Debug, Error)]
pub enum CcrError {
    /// Incompatible shapes, ranks, or index ranges.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Invalid values or configuration (non-finite entries, bad parameters).
    #[error("validation error: {0}")]
    Validation(String),

    /// A matrix that should have full column rank is numerically rank-deficient.
    #[error("degenerate basis: {0}")]
    DegenerateBasis(String),

    /// A matrix expected to be positive semidefinite has a significantly
    /// negative eigenvalue.
    #[error("not positive semidefinite: {0}")]
    NotPsd(String),

    /// A group label that does not exist in the dataset.
    #[error("unknown group: {0}")]
    UnknownGroup(String),

    /// An operation that requires centered data received uncentered data.
    #[error("state error: {0}")]
    NotCentered(String),

    /// Invalid argument combination (e.g. comparing a group with itself).
    #[error("argument error: {0}")]
    Argument(String),

    /// A Pearson correlation is undefined because a projected score has zero
    /// variance within a group.
    #[error("undefined correlation: zero variance of the direction-{direction} score in group '{group}'")]
    UndefinedCorrelation { group: String, direction: usize },

    /// The dataset has exactly two groups; the binary estimator applies.
    #[error("use the binary estimator: {0}")]
    UseBinary(String),

    /// A simulation scenario is internally inconsistent.
    #[error("scenario error: {0}")]
    Scenario(String),

    /// A numerical procedure could not produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CcrError>;
