use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what}: non-finite value at coordinate {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("share vector outside the simplex: {reason}")]
    OutsideSimplex { reason: String },

    #[error("unsupported target: {0}")]
    UnsupportedTarget(String),

    #[error("unknown method `{0}` (expected contraction, convex_tr or residual_tr)")]
    UnknownMethod(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn dimension(what: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { what, expected, found }
    }

    /// True for errors caused by the caller's data rather than by IO.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_))
    }
}
