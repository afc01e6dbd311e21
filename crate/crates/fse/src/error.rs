use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum FseError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: config hash {found} does not match its contents ({expected})")]
    Hash {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: holds a {found} model, expected {expected}")]
    KindMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("check failed: {0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] fse_core::Error),
}

pub type Result<T> = std::result::Result<T, FseError>;

impl FseError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        FseError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn corrupt(path: &Path, reason: impl Into<String>) -> Self {
        FseError::Corrupt {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// 0 success, 1 check failure, 2 usage error, 3 I/O error.
    pub fn exit_code(&self) -> u8 {
        match self {
            FseError::Usage(_) | FseError::KindMismatch { .. } => 2,
            FseError::Core(fse_core::Error::Config(_)) => 2,
            FseError::Io { .. } | FseError::Version { .. } | FseError::Hash { .. } | FseError::Corrupt { .. } => 3,
            FseError::Check(_) | FseError::Core(_) => 1,
        }
    }
}
