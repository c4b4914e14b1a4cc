use thiserror::Error;

/// Errors shared across the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration violations:\n{}", .0.join("\n"))]
    ConfigList(Vec<String>),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("physics diverged: {0}")]
    PhysicsDivergence(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("undefined retention: cumulative injection is zero")]
    UndefinedRetention,

    #[error("missing prerequisite artifact: {0}")]
    MissingArtifact(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("provenance hash mismatch: {0}")]
    Provenance(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code class for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::ConfigList(_) | Error::RejectedInput(_) => 2,
            Error::MissingArtifact(_) | Error::Corrupt(_) | Error::Provenance(_) => 3,
            Error::Divergence(_) | Error::PhysicsDivergence(_) => 4,
            _ => 1,
        }
    }
}
