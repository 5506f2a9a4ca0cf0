use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed WAV: bad `{chunk}` chunk: {detail}")]
    WavParse { chunk: String, detail: String },

    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("input too short: need at least {required} {unit}, got {actual}")]
    TooShort {
        required: usize,
        actual: usize,
        unit: &'static str,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("corrupt file: {detail} at byte offset {offset}")]
    Corruption { offset: u64, detail: String },

    #[error("unknown tap `{requested}`; valid taps: {}", valid.join(", "))]
    UnknownTap { requested: String, valid: Vec<String> },

    #[error("cannot sample batch: {0}")]
    Sampling(String),

    #[error("mining failed: {0}")]
    Mining(String),

    #[error("training diverged at step {step} (learning rate {learning_rate}): non-finite loss")]
    Divergence { step: usize, learning_rate: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("covariance is singular ({0}); use a shrinkage gamma > 0")]
    Singular(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Divergence { .. } | Error::NonFinite { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
