use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed document: {0}")]
    Document(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("non-numeric cell `{value}` in column `{column}` at row {row}")]
    NonNumeric { column: String, row: usize, value: String },
    #[error("duplicate zone id `{0}`")]
    DuplicateZone(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("optimizer did not converge for {what} (best so far {best:?})")]
    NonConvergence { what: String, best: Vec<f64> },
    #[error("fit failed for {context}: {reason}")]
    FitFailed { context: String, reason: String },
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("identifiers are not aligned: {0}")]
    Misaligned(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    /// Wraps a lower-level failure with the model location it happened at.
    pub fn annotate(self, context: impl Into<String>) -> Self {
        let context = context.into();
        match self {
            Error::FitFailed { context: inner, reason } => {
                Error::FitFailed { context: format!("{context}, {inner}"), reason }
            }
            other => Error::FitFailed { context, reason: other.to_string() },
        }
    }
}
