use std::path::PathBuf;
use std::process::ExitCode;

use graphrag_core::{Error, ErrorClass};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("graph file {} not found; run build first", .0.display())]
    MissingGraph(PathBuf),

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn class(&self) -> ErrorClass {
        match self {
            CliError::Config(_) => ErrorClass::Config,
            CliError::MissingGraph(_) => ErrorClass::Data,
            CliError::Output { .. } => ErrorClass::Internal,
            CliError::Core(e) => e.class(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Provider => 3,
            ErrorClass::Data => 4,
            ErrorClass::Internal => 5,
        })
    }
}
