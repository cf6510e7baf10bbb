use thiserror::Error;

/// Error taxonomy shared by every module in the crate.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate path: {0}")]
    DegeneratePath(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(String),
    #[error("resource limit: {0}")]
    ResourceLimit(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
