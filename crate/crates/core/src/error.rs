use std::path::PathBuf;

/// Errors produced while loading inputs, validating configuration, or running simulations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A malformed row or document in an input file.
    #[error("{file}:{line}: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    /// An argument outside of its documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A scenario, portfolio, or topology that cannot be simulated as written.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A run exceeded its slice budget before all work completed.
    #[error("simulation did not finish within {0} slices")]
    HorizonExceeded(u64),
}

impl Error {
    pub(crate) fn parse(file: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than a failure during execution.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::HorizonExceeded(_))
            && !matches!(self, Error::Io { source, .. } if source.kind() != std::io::ErrorKind::NotFound)
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
