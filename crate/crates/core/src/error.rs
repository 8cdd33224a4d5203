use thiserror::Error;

pub type Result<T> = std::result::Result<T, VrdError>;

#[derive(Debug, Error)]
pub enum VrdError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("{0} did not converge")]
    NonConvergence(&'static str),

    #[error("singular matrix at pivot {0}")]
    Singular(usize),

    #[error("problem size {size} exceeds guard {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("malformed {what} at byte offset {offset}: {msg}")]
    Format {
        what: &'static str,
        offset: usize,
        msg: String,
    },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("training diverged at epoch {epoch}, example {example}")]
    Divergence { epoch: usize, example: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl VrdError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        VrdError::ShapeMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        VrdError::InvalidArgument(msg.into())
    }
}
