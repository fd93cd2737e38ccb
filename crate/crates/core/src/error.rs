use thiserror::Error;

/// Errors raised by the coupling, point-process and chain machinery.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("state spaces do not match")]
    SpaceMismatch,

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("inadmissible path at index {index}: kernel density vanishes at the observed value")]
    InadmissiblePath { index: i64 },

    #[error("constant search failed: {reason}")]
    SearchFailure {
        reason: String,
        /// `(candidate, estimate, standard error)` for every tried candidate.
        trace: Vec<(f64, f64, f64)>,
    },

    #[error("insufficient replicas: {0}")]
    InsufficientReplicas(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("at time index {index}: {source}")]
    AtIndex {
        index: i64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at(self, index: i64) -> Self {
        Error::AtIndex {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
