use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] deformreg_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, msg: impl Into<String>) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.into() }
    }

    /// Short stable name printed by the command line on failure.
    pub fn category(&self) -> &'static str {
        use deformreg_core::Error as E;
        match self {
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Input(_) => "input",
            Error::Core(e) => match e {
                E::InvalidConfig(_) => "config",
                E::NonFinite { .. } => "numeric",
                E::ShapeMismatch(_) | E::TooSmall(_) | E::EmptyGrid => "shape",
                E::InvalidVolume(_) | E::ClassAbsent(_) | E::LinearOnLabels | E::Empty(_) => "input",
            },
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "io" => 3,
            "format" => 4,
            "config" => 5,
            "shape" => 6,
            "input" => 7,
            _ => 8,
        }
    }
}
