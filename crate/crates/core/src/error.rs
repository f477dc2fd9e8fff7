use thiserror::Error;

/// Errors raised by the simulation and analytics routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inputs are individually valid but inconsistent with each other.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// The input series or run is too short for the requested analysis.
    #[error("insufficient length: {0}")]
    Length(String),

    /// A numerical routine failed to produce a finite, converged result.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
