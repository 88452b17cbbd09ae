use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Parameters outside the underdamped oscillation regime.
    #[error("regime error: {0}")]
    Regime(String),

    #[error("aliasing: {0}")]
    Aliasing(String),

    /// The forward model produced a covariance that is not positive semidefinite.
    #[error("model error: {0}")]
    Model(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("no phase value above threshold {0}")]
    EmptyPhase(f64),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::DegenerateInput(msg.into())
    }
}
