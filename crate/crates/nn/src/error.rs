use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{context}: expected width {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("parameter `{0}` already exists")]
    DuplicateParam(String),
    #[error("backward called on a tape with no recorded forward pass")]
    EmptyTape,
    #[error("loss must be a scalar node, got width {0}")]
    NonScalarLoss(usize),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint format version {found} not supported (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("config hash mismatch: expected {expected}, checkpoint has {found}")]
    ConfigHash { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NnError {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        NnError::ShapeMismatch {
            context: context.into(),
            expected,
            got,
        }
    }
}
