use std::path::{Path, PathBuf};

use flowemu_core::error::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Validation(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("stale upstream artifact: {0}")]
    Stale(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 for bad input, 3 for numerical failure, 4 for stage-order violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Io { .. } | Error::Format { .. } => 2,
            Error::Stale(_) => 4,
            Error::Core(e) => match e {
                CoreError::Invalid(_)
                | CoreError::Domain { .. }
                | CoreError::DegenerateMap(_)
                | CoreError::Dimension { .. }
                | CoreError::Parameter { .. }
                | CoreError::TooManyEdges { .. }
                | CoreError::Unfitted => 2,
                CoreError::NoConvergence { .. }
                | CoreError::Conditioning { .. }
                | CoreError::NotPositiveDefinite(_)
                | CoreError::UndefinedMre(_)
                | CoreError::Quadrature { .. } => 3,
            },
        }
    }
}

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

pub(crate) fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), msg: msg.into() }
}
