use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the domain an operation is defined on.
    #[error("input domain error: {0}")]
    Domain(String),

    #[error("degenerate isochrone: ct = {ct} must exceed the focal distance 2d = {focal}")]
    DegenerateIsochrone { ct: f64, focal: f64 },

    #[error("isochrone does not meet the scene ball (nearest distance {distance}, radius {radius})")]
    OutOfScene { distance: f64, radius: f64 },

    #[error("singular configuration: |grad T| = {0} on the integration path")]
    SingularConfiguration(f64),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("rank mismatch: expected {expected}, found {found}")]
    Rank { expected: usize, found: usize },

    #[error("profile is not bandlimited: relative tail energy {residual:e} exceeds {tolerance:e}")]
    Bandlimit { residual: f64, tolerance: f64 },

    #[error("insufficient padding: field reaches {0:.3e} (relative) within 10% of the grid boundary")]
    InsufficientPadding(f64),

    #[error("data inconsistent with compact support: boundary residual {residual:e} exceeds {tolerance:e}")]
    Inconsistent { residual: f64, tolerance: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
