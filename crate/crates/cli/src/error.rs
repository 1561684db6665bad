use std::path::PathBuf;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("training diverged at step {step}: {message}")]
    Diverged { step: u64, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    BadInput { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] sumo_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use sumo_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Diverged { .. } => EXIT_DIVERGED,
            CliError::Io { .. } | CliError::BadInput { .. } => EXIT_IO,
            CliError::Core(E::Io { .. } | E::Parse { .. } | E::Format(_)) => EXIT_IO,
            CliError::Core(E::Domain(_) | E::Shape { .. } | E::Refused(_)) => EXIT_USAGE,
        }
    }
}
