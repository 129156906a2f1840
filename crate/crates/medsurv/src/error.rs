//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),

    #[error("row {row}: time {value} is not a positive finite number")]
    InvalidTime { row: usize, value: f64 },

    #[error("row {row}: unrecognized status code `{value}` (expected 0/1 or true/false)")]
    UnknownStatus { row: usize, value: String },

    #[error("row {row}: empty cell in factor column `{column}`")]
    EmptyFactorCell { row: usize, column: String },

    #[error("factorial cell {0} has no observations")]
    EmptyCell(String),

    #[error("group `{0}`: median survival time does not exist (curve never falls to 1/2)")]
    MedianAbsent(String),

    #[error("group `{0}`: degenerate standard deviation estimate (sigma = 0)")]
    DegenerateSigma(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("hypothesis/layout mismatch: {0}")]
    HypothesisMismatch(String),

    #[error("matrix is not a contrast matrix: {0}")]
    NotAContrast(String),

    #[error("permutation draws discarded ({discarded} of {attempted}) exceed the allowed fraction {max_fraction}")]
    ExcessiveDiscards {
        discarded: usize,
        attempted: usize,
        max_fraction: f64,
    },

    #[error("scenario infeasible: {excluded} of {replications} replications excluded")]
    InfeasibleScenario {
        excluded: usize,
        replications: usize,
    },

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("oracle assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("scenario file: {0}")]
    ScenarioParse(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
