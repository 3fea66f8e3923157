use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, AppError>;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("client {client}: expected slot {expected}, found {found}")]
    GapInSlots {
        client: String,
        expected: u64,
        found: u64,
    },
    #[error("line {line}: negative volume {volume}")]
    NegativeVolume { line: u64, volume: f64 },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] fedgcc_core::Error),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("run {run}: {source}")]
    InRun { run: String, source: Box<AppError> },
}

impl AppError {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        AppError::Io {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            AppError::MissingFile(_) => "missing-file",
            AppError::MalformedRow { .. } => "malformed-row",
            AppError::GapInSlots { .. } => "gap-in-slots",
            AppError::NegativeVolume { .. } => "negative-volume",
            AppError::Config(_) | AppError::Json(_) => "invalid-config",
            AppError::Core(fedgcc_core::Error::NonFinite { .. }) => "diverged",
            AppError::Core(_) => "invalid-argument",
            AppError::Io { .. } => "io-error",
            AppError::InRun { source, .. } => source.kind(),
        }
    }

    /// 2 for problems with the inputs, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Core(fedgcc_core::Error::NonFinite { .. }) | AppError::Io { .. } => 3,
            AppError::InRun { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
