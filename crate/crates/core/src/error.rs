use std::path::PathBuf;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("degenerate row {row}: norm {norm:e} is below 1e-12")]
    DegenerateRow { row: usize, norm: f64 },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("vanishing trace: {0:e}")]
    VanishingTrace(f64),

    #[error("target annihilates correlation: masked squared norm {0:e}")]
    TargetAnnihilates(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tensor format: {0}")]
    Format(String),

    #[error("{path}: line {line}: {msg}")]
    Config { path: String, line: usize, msg: String },

    #[error("training diverged at step {0}")]
    Diverged(usize),

    #[error("metric returned NaN for ingredient `{0}`")]
    NanMetric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
