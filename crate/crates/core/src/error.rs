use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Bad user input: malformed files, inconsistent dimensions, invalid config.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A precision matrix was not positive definite even after jitter.
    #[error("cholesky factorization failed in {context}: smallest pivot {pivot:e} at index {index}")]
    Cholesky {
        context: &'static str,
        index: usize,
        pivot: f64,
    },

    /// The orthogonality system `C_k Q^{-1} C_k'` could not be inverted.
    #[error("loading {k}: constraint system is singular (rank collapse among loadings)")]
    SingularConstraint { k: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("iteration {iteration}, step '{step}': {source}")]
    Step {
        iteration: usize,
        step: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Cholesky { .. } | Error::SingularConstraint { .. } | Error::Numerical(_) => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_step(self, iteration: usize, step: &'static str) -> Self {
        Error::Step {
            iteration,
            step,
            source: Box::new(self),
        }
    }
}
