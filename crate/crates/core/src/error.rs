use std::fmt;

/// Errors produced anywhere in the simulator stack.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A physical or configuration parameter is outside its valid range.
    InvalidParameter(String),
    /// An argument lies outside the mathematical domain of an operation.
    Domain(String),
    /// Numerical routine did not reach its tolerance.
    Numerical(String),
    /// Not enough observations to run a fit.
    InsufficientData { needed: usize, got: usize },
    /// Observations do not determine the fitted model.
    DegenerateData(String),
    /// Iterative fit stopped without converging; carries the best point seen.
    Convergence { best: Vec<f64>, rmse: f64 },
    /// Vector or matrix shapes disagree.
    Dimension { expected: usize, got: usize },
    /// Exhaustive enumeration would be too large.
    TooLarge { units: usize, max: usize },
    /// Empty input where at least one item is required.
    Empty(&'static str),
    /// Malformed IDX or checkpoint bytes.
    Parse { offset: usize, msg: String },
    /// Underlying IO failure.
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(m) => write!(f, "invalid parameter: {m}"),
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Numerical(m) => write!(f, "numerical error: {m}"),
            Error::InsufficientData { needed, got } => {
                write!(f, "insufficient data: need at least {needed} points, got {got}")
            }
            Error::DegenerateData(m) => write!(f, "degenerate data: {m}"),
            Error::Convergence { best, rmse } => {
                write!(f, "fit did not converge (best {best:?}, rmse {rmse:.3e})")
            }
            Error::Dimension { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::TooLarge { units, max } => {
                write!(f, "{units} units exceed the enumeration limit of {max}")
            }
            Error::Empty(what) => write!(f, "empty {what}"),
            Error::Parse { offset, msg } => write!(f, "parse error at byte {offset}: {msg}"),
            Error::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
