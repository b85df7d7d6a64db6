use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    File {
        path: PathBuf,
        #[source]
        source: ginv_core::Error,
    },

    #[error(transparent)]
    Core(#[from] ginv_core::Error),

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 0 success, 1 usage error, 2 data error, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        use ginv_core::Error as E;
        let core = match self {
            CliError::Usage(_) => return 1,
            CliError::File { source, .. } => source,
            CliError::Core(e) => e,
            CliError::Json { .. } | CliError::Csv(_) => return 2,
        };
        match core {
            E::Diverged { .. } => 3,
            E::Config(_) | E::InvalidGroup(_) | E::GridMismatch { .. } => 1,
            _ => 2,
        }
    }
}

pub(crate) fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::File {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

pub(crate) fn at(path: &std::path::Path) -> impl FnOnce(ginv_core::Error) -> CliError + '_ {
    move |e| CliError::File {
        path: path.to_path_buf(),
        source: e,
    }
}
