use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("matrix is not symmetric: entry ({row}, {col}) has no matching transpose entry")]
    NotSymmetric { row: usize, col: usize },

    #[error("missing diagonal entry in row {0}")]
    MissingDiagonal(usize),

    #[error("nonpositive diagonal {value} in row {row}")]
    NonPositiveDiagonal { row: usize, value: f64 },

    #[error("incomplete Cholesky breakdown at row {row} after {shifts} diagonal shifts")]
    Breakdown { row: usize, shifts: usize },

    #[error("zero pivot in triangular solve at row {0}")]
    ZeroPivot(usize),

    #[error("matrix is not triangular: entry ({row}, {col})")]
    NotTriangular { row: usize, col: usize },

    #[error("non-finite activation in message-passing block {block}")]
    NonFinite { block: usize },

    #[error("non-finite gradient; optimizer step aborted")]
    NonFiniteGradient,

    #[error("sparsity pattern mismatch: {0}")]
    PatternMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
