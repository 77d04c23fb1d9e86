use thiserror::Error;

use crate::format::ParseError;
use crate::network::NetworkError;
use crate::props::PropertyError;
use crate::solver::SolverError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the underlying engine ran out of its time budget.
    pub fn is_timeout(&self) -> bool {
        matches!(self, Error::Solver(SolverError::TimeBudgetExceeded))
    }
}
