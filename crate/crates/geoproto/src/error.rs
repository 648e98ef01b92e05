use std::io;
use std::path::{Path, PathBuf};

use geoproto_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("incompatible artifact: {0}")]
    Incompatible(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub type AppResult<T> = Result<T, AppError>;

impl AppError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) | AppError::Io { .. } => 3,
            AppError::Diverged(_) => 4,
            AppError::Incompatible(_) => 5,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> AppError + '_ {
        move |source| AppError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<CoreError> for AppError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Diverged { .. } => AppError::Diverged(e.to_string()),
            CoreError::InvalidParameter(_) | CoreError::InvalidSpec(_) => AppError::Config(e.to_string()),
            CoreError::DimensionMismatch { .. } | CoreError::MissingBaseline(_) => AppError::Incompatible(e.to_string()),
            _ => AppError::Data(e.to_string()),
        }
    }
}
