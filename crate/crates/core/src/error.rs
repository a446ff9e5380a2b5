use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside the domain the operation accepts.
    InvalidParameter { name: &'static str, reason: &'static str },
    /// Vector or tensor shapes do not line up.
    DimensionMismatch { expected: usize, found: usize },
    /// Gram-Schmidt kept producing (numerically) dependent draws.
    Orthonormalization { attempts: usize },
    /// A per-sample gradient contained NaN or infinity.
    NonFiniteGradient { iter: usize, sample: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: &'static str) -> Self {
        Error::InvalidParameter { name, reason }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, reason } => write!(f, "invalid `{name}`: {reason}"),
            Error::DimensionMismatch { expected, found } => {
                write!(f, "dimension mismatch: expected {expected}, found {found}")
            }
            Error::Orthonormalization { attempts } => {
                write!(f, "could not orthonormalize feature draws after {attempts} attempts")
            }
            Error::NonFiniteGradient { iter, sample } => {
                write!(f, "non-finite gradient at iteration {iter} for sample index {sample}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
