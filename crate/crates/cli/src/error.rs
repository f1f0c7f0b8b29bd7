use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: ssm_bench_core::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 1 usage/config, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core { source, .. } if source.is_numerical() => 3,
            CliError::Core { .. } | CliError::Io { .. } => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches module context to core errors.
pub trait Context<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T> Context<T> for ssm_bench_core::Result<T> {
    fn context(self, ctx: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: ctx(), source })
    }
}
