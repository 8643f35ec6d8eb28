use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Malformed `.taer` payloads. Each failure mode has its own variant so that
/// callers (and the fuzz tests) can tell them apart.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AerError {
    #[error("bad magic {0:02x?}, expected \"TAER\"")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated payload: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("event count mismatch: header says {header}, payload holds {payload} bytes of records")]
    EventCountMismatch { header: u32, payload: usize },
    #[error("invalid polarity byte {byte:#04x} in record {index}")]
    InvalidPolarity { index: usize, byte: u8 },
    #[error("invalid header field: {0}")]
    InvalidHeader(String),
    #[error("record {index} invalid: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("events out of order at record {0}")]
    OutOfOrder(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("ambiguous localization: threshold {threshold} does not exceed the idle column reading {idle_code}")]
    AmbiguousLocalization { threshold: u16, idle_code: u16 },
    #[error(transparent)]
    Aer(#[from] AerError),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss} ({detail})")]
    Diverged {
        epoch: usize,
        batch: usize,
        loss: f64,
        detail: String,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
