use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] vidmatte_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, detail: impl ToString) -> Self {
        Error::Format { path: path.to_path_buf(), detail: detail.to_string() }
    }

    /// Process exit code: 2 for bad input or usage, 3 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        use vidmatte_core::Error as C;
        match self {
            Error::Usage(_) | Error::Format { .. } => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            Error::Io { .. } => 3,
            Error::Core(C::InvalidInput(_) | C::Shape(_) | C::Config(_) | C::EmptyMask | C::MissingMotion) => 2,
            Error::Core(_) => 3,
        }
    }
}
