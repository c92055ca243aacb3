use std::path::PathBuf;

/// Crate-wide error type.
///
/// Variants are grouped by the failure surface they belong to so the CLI can
/// map them onto stable process exit codes (see [`Error::exit_code`]).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor shapes are incompatible for the requested operation.
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An index (class label, sample index) is out of range.
    #[error("index out of range in {op}: {detail}")]
    Index { op: &'static str, detail: String },

    /// Invalid configuration value or inconsistent run setup.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A byte stream does not conform to the expected container format.
    #[error("format error in {format}: {detail}")]
    Format { format: &'static str, detail: String },

    /// A byte stream ends before its declared payload is complete.
    #[error("truncated {format} stream: expected {expected} bytes, got {got}")]
    Truncated {
        format: &'static str,
        expected: usize,
        got: usize,
    },

    /// Failure while reading or decoding one file of a dataset tree.
    #[error("failed to ingest {path}: {detail}")]
    Ingest { path: PathBuf, detail: String },

    /// Training aborted because the loss left the finite range.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f32 },

    /// Checkpoint file versions or checksums do not line up.
    #[error("checkpoint version {got} is not supported (expected {expected})")]
    Version { expected: u16, got: u16 },

    /// Stored checksum does not match the recomputed one.
    #[error("corrupt {what}: {detail}")]
    Corrupt { what: &'static str, detail: String },

    /// A checkpoint cannot be applied to the requested architecture.
    #[error("transfer mismatch: {0}")]
    Transfer(String),

    /// Checkpoint and dataset (or member matrices) are incompatible.
    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn dimension(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub fn config(detail: impl Into<String>) -> Self {
        Error::Config(detail.into())
    }

    pub fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable CLI exit code contract:
    /// 0 success, 2 input error, 3 divergence, 4 incompatibility, 5 bad argument.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 3,
            Error::Incompatible(_) | Error::Transfer(_) | Error::Version { .. } => 4,
            Error::Config(_) | Error::Index { .. } => 5,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
