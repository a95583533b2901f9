use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not Hermitian positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("non-finite value in {estimator} at iteration {iteration}")]
    NonFinite {
        estimator: &'static str,
        iteration: usize,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Trial {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures that originate in the numerics rather than in
    /// user-supplied configuration or I/O.
    pub fn is_numerical(&self) -> bool {
        if let Error::Trial { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::NotPositiveDefinite(_) | Error::NonFinite { .. } | Error::DimensionMismatch(_)
        )
    }
}
