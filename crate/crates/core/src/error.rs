use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A computation produced a non-finite or otherwise unusable value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The closed loop integrator produced a non-finite state.
    #[error("integration diverged at t = {time}")]
    IntegrationDiverged { time: f64 },

    /// A revision probability exceeded one; the uniformization rate is too small.
    #[error("rate bound violated: outgoing rate {rate} exceeds rho = {rho} at t = {time}")]
    RateBoundViolated { rate: f64, rho: f64, time: f64 },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for errors that stem from bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!("dimension mismatch for {what}: expected {expected}, got {got}")));
    }
    Ok(())
}
