use thiserror::Error;

/// Errors raised by the inference library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("gram cache was built for a different dataset or kernel")]
    CacheMismatch,

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("quadrature bounds too tight: boundary mass fraction {0:.3e}")]
    BoundsTooTight(f64),

    #[error("markov chain rejected every proposal after warmup")]
    ChainStuck,

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
