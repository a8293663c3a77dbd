use thiserror::Error;

use crate::table::Coord;

#[derive(Debug, Error)]
pub enum Error {
    #[error("table has no cells")]
    EmptyTable,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("cell {0:?} is flagged as both row header and column header")]
    DoubleHeader(Coord),
    #[error("inconsistent header flags at {0:?}: {1}")]
    InconsistentHeaders(Coord, &'static str),
    #[error("coordinate {coord:?} out of range for a {n_rows}x{n_cols} table")]
    OutOfRange { coord: Coord, n_rows: usize, n_cols: usize },
    #[error("highlighted coordinate {0:?} is a header corner cell")]
    HighlightOnCorner(Coord),
    #[error("permutation has length {found}, expected {expected}")]
    PermutationSizeMismatch { expected: usize, found: usize },
    #[error("not a permutation: {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("table has no highlighted cells")]
    NoHighlight,
    #[error("p_max must be at least 1, got {0}")]
    InvalidPMax(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("loss is not finite ({0})")]
    NonFiniteLoss(f64),
    #[error("candidate and reference counts differ ({candidates} vs {references})")]
    LengthMismatch { candidates: usize, references: usize },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
