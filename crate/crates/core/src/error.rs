use crate::linalg::SolveReport;
use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("travel lookup failed: {0}")]
    Lookup(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not a generator: row {row} sums to {sum:e}")]
    NotGenerator { row: usize, sum: f64 },

    #[error("stationary solve failed (station {station:?}, fleet {fleet:?}): {reason} ({report:?})")]
    Solver {
        station: Option<usize>,
        fleet: Option<Vec<u32>>,
        reason: String,
        report: SolveReport,
    },

    #[error("modeling error: {0}")]
    Modeling(String),

    #[error("search budget of {budget} leaves exceeded")]
    BudgetExceeded { budget: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("policy {policy} produced an illegal decision at t={time}: {reason}")]
    PolicyFault {
        policy: String,
        time: f64,
        reason: String,
    },

    #[error("simulation fault: {0}")]
    Simulation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
