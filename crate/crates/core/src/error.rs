use thiserror::Error;

/// Crate-wide error type. The variant name doubles as the machine-readable
/// error code reported by the service (see [`Error::code`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate map bounds: {0}")]
    InvalidBounds(String),
    #[error("layer mismatch: {0}")]
    LayerMismatch(String),
    #[error("unsupported state: {0}")]
    UnsupportedState(String),
    #[error("no stable base shift exists for the requested step")]
    NoStableShift,
    #[error("infeasible foothold: {0}")]
    InfeasibleFoothold(String),
    #[error("no path to goal")]
    NoPath,
    #[error("search budget exhausted before any plan was found")]
    BudgetExhausted,
    #[error("invalid start state: {0}")]
    InvalidStart(String),
    #[error("insufficient training data: {successful} successful tasks, {required} required")]
    InsufficientData { successful: usize, required: usize },
    #[error("world is already frozen by an active predictive session")]
    AlreadyFrozen,
    #[error("world is frozen by an active predictive session")]
    Frozen,
    #[error("invalid session state: {0}")]
    InvalidSessionState(String),
    #[error("action rejected: {0}")]
    ActionRejected(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidBounds(_) => "InvalidBounds",
            Error::LayerMismatch(_) => "LayerMismatch",
            Error::UnsupportedState(_) => "UnsupportedState",
            Error::NoStableShift => "NoStableShift",
            Error::InfeasibleFoothold(_) => "InfeasibleFoothold",
            Error::NoPath => "NoPath",
            Error::BudgetExhausted => "BudgetExhausted",
            Error::InvalidStart(_) => "InvalidStart",
            Error::InsufficientData { .. } => "InsufficientData",
            Error::AlreadyFrozen => "AlreadyFrozen",
            Error::Frozen => "Frozen",
            Error::InvalidSessionState(_) => "InvalidSessionState",
            Error::ActionRejected(_) => "ActionRejected",
            Error::InvalidRequest(_) => "InvalidRequest",
            Error::NotFound(_) => "NotFound",
            Error::Format(_) => "Format",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
