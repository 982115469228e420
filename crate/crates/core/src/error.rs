use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("KL divergence undefined: q[{index}] is zero where p is {p} (missing label smoothing upstream?)")]
    ZeroSupport { index: usize, p: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("embedding is not unit norm (|e| = {norm})")]
    NotUnitNorm { norm: f64 },

    #[error("not enough queue entries for K={k}: {available} available")]
    InsufficientNeighbors { k: usize, available: usize },

    #[error("empty contrastive pool")]
    EmptyPool,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dataset format: {0}")]
    Format(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize, last_good: Option<Box<crate::network::Checkpoint>> },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }
}
