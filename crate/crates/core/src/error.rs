use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    /// The ν-functional has no closed form for a non-constant volatility.
    #[error("non-constant volatility requires a path-based estimate")]
    NeedsPathEstimate,

    /// F'(t) is numerically singular, so the score has a degenerate limit.
    #[error("Fisher derivative matrix is singular (min/max eigenvalue ratio {ratio:.3e})")]
    S7Violation { ratio: f64 },

    #[error("normal equations are singular (condition number {condition:.3e})")]
    SingularNormalEquations { condition: f64 },

    #[error("profile maximum at bracket boundary T = {period}")]
    BoundaryMaximum { period: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
