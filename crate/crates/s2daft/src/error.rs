use std::path::PathBuf;

/// Failures of the file layer and the CLI.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: format error at byte {offset}: {detail}")]
    Format { path: PathBuf, offset: u64, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] s2daft_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, offset: u64, detail: impl Into<String>) -> Self {
        Self::Format { path: path.into(), offset, detail: detail.into() }
    }

    /// 2 for configuration problems, 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Core(s2daft_core::Error::Param(_)) => 2,
            Self::Core(s2daft_core::Error::NonFinite { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
