use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented precondition.
    #[error("invalid input: {0}")]
    Validation(String),

    /// Parameter vectors, layouts or derivative bundles do not fit together.
    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The state blew up during time integration. Integrators attach what was
    /// recorded before the failing step.
    #[error("divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String, partial: Option<Box<crate::timestepper::TrajectoryRecord>> },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn structure(msg: impl Into<String>) -> Error {
    Error::Structure(msg.into())
}
