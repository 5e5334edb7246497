use chrono::{DateTime, Utc};

pub type Result<T, E = ArenaError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ArenaError {
    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// `pointer` is a JSON pointer into the config document.
    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("submission rejected: phase {phase:?} closed at {deadline}")]
    DeadlinePassed { phase: String, deadline: DateTime<Utc> },

    /// Failures of the judge itself (missing hidden models, unreadable data),
    /// as opposed to failures of a submission.
    #[error("operator error: {0}")]
    Operator(String),

    #[error(transparent)]
    Core(#[from] maestro_core::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("store error: {0}")]
    Store(String),
}

impl ArenaError {
    pub fn config(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config { pointer: pointer.into(), message: message.into() }
    }

    /// Stable machine-readable kind, used by the CLI and the HTTP layer.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::NotFound(_) => "not_found",
            Self::Input(_) => "input",
            Self::Config { .. } => "config",
            Self::DeadlinePassed { .. } => "deadline_passed",
            Self::Operator(_) => "operator",
            Self::Core(_) => "core",
            Self::Io(_) => "io",
            Self::Store(_) => "store",
        }
    }
}
