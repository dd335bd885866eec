use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("path violation at index {index}: {reason}")]
    PathViolation { index: usize, reason: String },

    #[error("walk generation failed: {0}")]
    Walk(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("missing labels: {0}")]
    MissingLabels(String),

    #[error("MAPE undefined: true value at index {0} is zero")]
    ZeroTarget(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::NonScalarLoss(_) => "non_scalar_loss",
            Error::DuplicateParameter(_) | Error::MissingParameter(_) => "parameter",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Config(_) => "config",
            Error::PathViolation { .. } => "path_violation",
            Error::Walk(_) => "walk",
            Error::Parse { .. } => "parse",
            Error::Checkpoint(_) => "checkpoint",
            Error::MissingLabels(_) => "missing_labels",
            Error::ZeroTarget(_) => "zero_target",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
