use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Cholesky factorization hit a non-positive pivot.
    #[error("factorization failed: matrix is not positive definite (pivot {pivot})")]
    Factorization { pivot: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    /// A documented precondition of an operation was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_len(what: &str, got: usize, expected: usize) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} has length {got}, expected {expected}"
        )))
    }
}
