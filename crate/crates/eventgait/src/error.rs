use std::io;
use std::path::{Path, PathBuf};

use eventgait_core::Error as CoreError;

/// Errors surfaced by file IO, configuration and the drivers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("gradient check failed: max relative error {max_rel_error:e} exceeds {tolerance:e}")]
    Gradcheck { max_rel_error: f64, tolerance: f64 },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 configuration, 3 data, 4 numeric or
    /// gradient-check failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::Data(_) | Error::Io { .. } => 3,
            Error::Gradcheck { .. } => 4,
            Error::Core(e) => match e {
                CoreError::InvalidArgument(_) => 2,
                CoreError::Numeric(_) | CoreError::DegenerateEmbedding => 4,
                CoreError::InvalidStream(_)
                | CoreError::Data(_)
                | CoreError::DegenerateBatch(_)
                | CoreError::State(_) => 3,
            },
        }
    }
}

/// Reads a whole file, attaching the path to failures.
pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
