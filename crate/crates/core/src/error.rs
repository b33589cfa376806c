use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid encoding rules: {0}")]
    Rules(String),
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    MissingColumn(String),
    #[error("columns referenced but absent from input: {0:?}")]
    UnmatchedColumns(Vec<String>),
    #[error("column `{column}` has missing values")]
    MissingValues { column: String },
    #[error("column `{column}` is entirely missing within group `{group}`")]
    EmptyGroup { column: String, group: String },
    #[error("column `{column}` row {row}: {reason}")]
    InvalidValue {
        column: String,
        row: usize,
        reason: String,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("entry {index} is not binary: {value}")]
    NonBinary { index: usize, value: f64 },
    #[error("response `{0}` contains a single class")]
    SingleClass(String),
    #[error("design matrix is rank deficient: `{column}` is collinear with earlier terms")]
    RankDeficient { column: String },
    #[error("not enough rows: need at least {needed}, have {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Errors that come from the numbers rather than from the input's shape.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Numerical(_) | Error::RankDeficient { .. } | Error::Degenerate(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
