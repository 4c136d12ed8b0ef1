use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared by all modules of the crate.
///
/// Variants group into three classes, which the CLI maps onto exit codes:
/// usage problems are handled by the argument parser, `Io`/`Format`/`Shape`/
/// `Domain` are data errors, and `Overflow`/`Diverged` are numeric guard
/// trips.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents: bad magic, unknown version, truncated
    /// payload, unparsable numbers, non-finite values on disk.
    #[error("format error: {0}")]
    Format(String),

    /// Dimension or element-count mismatch between two structures.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input outside an operation's domain (all-zero tensor, out-of-range
    /// magnitude, degenerate survivor set, invalid configuration...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Accumulator magnitude reached the 2^31 guard.
    #[error("accumulator overflow: |{0}| reached the 2^31 guard")]
    Overflow(i64),

    /// Training produced a non-finite loss.
    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors raised by a numeric guard rather than bad input data.
    pub fn is_numeric_guard(&self) -> bool {
        matches!(self, Error::Overflow(_) | Error::Diverged { .. })
    }
}
