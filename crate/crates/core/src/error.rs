use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ingest::CountryCode;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate entry for ({date}, {country}) at line {line}")]
    DuplicateEntry {
        date: NaiveDate,
        country: CountryCode,
        line: u64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate window: only {retained} column(s) with non-zero variance")]
    DegenerateWindow { retained: usize },

    #[error(
        "window of {window} days is not larger than the {countries} countries being modelled; \
         use a larger window or a stricter country filter"
    )]
    Feasibility { window: usize, countries: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("eigendecomposition failed: {0}")]
    Numeric(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid baseline: {0}")]
    InvalidBaseline(String),
}

impl Error {
    pub(crate) fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
