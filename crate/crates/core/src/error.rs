use thiserror::Error;

/// Errors raised by the factorization, sensitivity and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
#[non_exhaustive]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is singular (leading coefficient is zero)")]
    Singular,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(
        "coefficients are not monotone non-negative at index {index}; \
         the closed-form sensitivity does not apply"
    )]
    MonotonicityViolated { index: usize },

    #[error("bandwidth {bandwidth} exceeds the participation separation b = {b}")]
    BandwidthExceedsSeparation { bandwidth: usize, b: usize },

    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),

    #[error("noise stream exhausted after {0} rows")]
    StreamExhausted(usize),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
