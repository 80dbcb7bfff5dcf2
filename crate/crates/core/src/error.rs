use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or network shapes disagree.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: String,
        actual: String,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss or gradient became NaN/Inf.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("capacity exceeded: {required} bytes required, {available} bytes available")]
    Capacity { required: u64, available: u64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt bundle {path}: {reason}")]
    CorruptBundle { path: PathBuf, reason: String },

    /// An owner shard is missing a sample the plan says it holds.
    #[error("store corruption: shard {shard} does not hold sample {sample}")]
    StoreCorruption { shard: usize, sample: u32 },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("trainer {trainer} aborted after {failures} numeric failures")]
    NumericAbort { trainer: usize, failures: usize },
}

impl Error {
    pub fn dim(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
