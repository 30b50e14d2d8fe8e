use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("incompatible Neumann flux: boundary integral {integral:.3e} exceeds tolerance {tolerance:.3e}")]
    IncompatibleFlux { integral: f64, tolerance: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("inconsistent dataset: {0}")]
    Dataset(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

impl ErrorClass {
    /// Process exit code: 1 configuration, 2 numerics, 3 I/O.
    pub fn exit_code(self) -> u8 {
        match self {
            ErrorClass::Config => 1,
            ErrorClass::Numeric => 2,
            ErrorClass::Io => 3,
        }
    }
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter(_) | Error::Shape(_) | Error::Dataset(_) | Error::Json(_) => {
                ErrorClass::Config
            }
            Error::IncompatibleFlux { .. } | Error::Convergence { .. } | Error::Degenerate(_) => {
                ErrorClass::Numeric
            }
            Error::Format(_) | Error::Corrupt(_) | Error::Io(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
