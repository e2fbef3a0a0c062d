use std::path::PathBuf;

use crate::providers::ProviderError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Provider,
    Data,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("conflict: duplicate id {0:?}")]
    Conflict(String),

    #[error("invalid document {id:?}: {reason}")]
    InvalidDocument { id: String, reason: String },

    #[error("invalid window: window must be at least 1 token")]
    InvalidWindow,

    #[error("invalid stride {stride}: must satisfy 1 <= stride <= window ({window})")]
    InvalidStride { window: usize, stride: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("provider error ({context}): {source}")]
    Provider {
        context: String,
        #[source]
        source: ProviderError,
    },

    #[error("unparseable extraction output for {chunk}: {message}")]
    ExtractionFormat { chunk: String, message: String },

    #[error("incomplete partition: node {0:?} has no community")]
    IncompletePartition(String),

    #[error("community {0} has no summary embedding")]
    MissingSummary(String),

    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown subtask {0:?} in dependency list")]
    UnknownSubtask(String),

    #[error("aggregation impossible: every retrieval subtask failed")]
    AggregationImpossible,

    #[error("unsupported graph file version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("graph file error: {0}")]
    GraphFile(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn provider(context: impl Into<String>, source: ProviderError) -> Self {
        Error::Provider {
            context: context.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Provider { .. } | Error::AggregationImpossible | Error::Contract(_) => {
                ErrorClass::Provider
            }
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Conflict(_)
            | Error::InvalidDocument { .. }
            | Error::ExtractionFormat { .. }
            | Error::UnsupportedVersion { .. }
            | Error::GraphFile(_)
            | Error::MissingSummary(_)
            | Error::IncompletePartition(_)
            | Error::Cycle(_)
            | Error::UnknownSubtask(_)
            | Error::InvalidWindow
            | Error::InvalidStride { .. } => ErrorClass::Data,
        }
    }
}
