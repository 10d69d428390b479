use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("blow-up at t = {t} in a run that is not a blow-up study ({run})")]
    BlowUp { t: f64, run: String },

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(phtaxis_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<phtaxis_core::Error> for CliError {
    fn from(e: phtaxis_core::Error) -> Self {
        match e {
            phtaxis_core::Error::Config(msg) => CliError::Config(msg),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 unexpected blow-up, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::BlowUp { .. } => 3,
            CliError::Io { .. } => 4,
            CliError::Core(_) => 1,
        }
    }
}
