use std::path::PathBuf;

/// Errors produced by the registration / prediction pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload in {path}: expected {expected} values, found {actual}")]
    TruncatedPayload {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("pyramid too deep: level dims {dims:?} cannot be subsampled further")]
    PyramidTooDeep { dims: [usize; 3] },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("point {0:?} lies outside the grid")]
    OutOfGrid([f64; 3]),

    #[error("zero variance in series column {column}; marker axis is degenerate")]
    ZeroVariance { column: usize },

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("numerical failure at step {step}")]
    NumericalFailure { step: usize },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code convention: 1 config, 2 numerical, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure { .. } => 2,
            Error::Io(_) | Error::TruncatedPayload { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
