use crate::backend::BackendError;
use crate::ledger::Ledger;
use crate::stats::StatsError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    /// A model call failed mid-run; `ledger` holds everything billed so far.
    #[error("run aborted after spending {:.6}: {source}", ledger.total())]
    Aborted { source: BackendError, ledger: Box<Ledger> },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
