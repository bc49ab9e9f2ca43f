use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data violates a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// The network topology cannot support the requested computation.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An iterative or factorization routine failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Inconsistent or structurally unusable active-set labels.
    #[error("label error: {0}")]
    Label(String),

    /// The operation refuses to act on its input (e.g. a non-optimal solution).
    #[error("refused: {0}")]
    Refused(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("unsupported file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what,
            expected,
            got,
        }
    }

    /// Whether this error stems from invalid input rather than a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::Dimension { .. }
                | Error::Structural(_)
                | Error::Label(_)
                | Error::Format(_)
                | Error::Json(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::Divergence { .. })
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dim(what, expected, got));
    }
    Ok(())
}
