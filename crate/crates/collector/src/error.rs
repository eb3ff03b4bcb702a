use thiserror::Error;

#[derive(Debug, Error)]
pub enum CollectorError {
    /// The request does not fit the session lifecycle (e.g. start while running).
    #[error("state error: {0}")]
    State(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Core(#[from] cabin_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CollectorError {
    /// Short machine-readable kind, used in API error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            CollectorError::State(_) => "state",
            CollectorError::Config(_) => "config",
            CollectorError::NotFound(_) => "not_found",
            CollectorError::Transport(_) => "transport",
            CollectorError::Core(cabin_core::Error::Validation(_)) => "validation",
            CollectorError::Core(_) => "core",
            CollectorError::Io(_) => "io",
        }
    }
}

pub type Result<T, E = CollectorError> = std::result::Result<T, E>;
