use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {message}")]
    Document { what: &'static str, message: String },

    #[error("{stage}: {source}")]
    Inference {
        stage: &'static str,
        #[source]
        source: mixhmm_core::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Read { .. } | CliError::Document { .. } => 2,
            CliError::Inference { .. } => 3,
            CliError::Config(_) => 4,
            CliError::Write { .. } => 1,
        }
    }

    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(mixhmm_core::Error) -> Self {
        move |source| CliError::Inference { stage, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
