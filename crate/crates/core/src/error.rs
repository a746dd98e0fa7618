use thiserror::Error;

/// Row and column positions are 1-based; for CSV input the row is the line
/// number in the file.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no data rows")]
    Empty,
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse { row: usize, column: usize, value: String },
    #[error("row {row}, column {column}: non-finite value {value}")]
    NonFinite { row: usize, column: usize, value: f64 },
    #[error("row {row} has {found} columns, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("k = {k} is invalid for a dataset of {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no standard baseline for dataset {dataset:?}, seed {seed}, k {k}")]
    MissingBaseline { dataset: String, seed: u64, k: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
