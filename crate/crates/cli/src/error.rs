use std::path::PathBuf;

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] tepkit::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 for usage and configuration problems, 2 for everything that
    /// failed while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Library(e) => match e {
                tepkit::Error::Config(_) | tepkit::Error::ConfigParse(_) | tepkit::Error::UnreachableBudget { .. } => 1,
                _ => 2,
            },
            CliError::Io { .. } | CliError::Data(_) => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
