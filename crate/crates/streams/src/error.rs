use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    UnknownColumn(String),

    #[error("row {row}, column `{column}`: missing value")]
    Missing { row: usize, column: String },

    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse { row: usize, column: String, value: String },

    #[error("warm-up of {warmup} rows exceeds the {rows} rows available")]
    WarmupTooLong { warmup: usize, rows: usize },

    #[error("invalid stream configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] rollrc::Error),
}

impl From<StreamError> for rollrc::Error {
    fn from(e: StreamError) -> Self {
        match e {
            StreamError::Core(inner) => inner,
            other => rollrc::Error::Source(other.to_string()),
        }
    }
}

pub type Result<T, E = StreamError> = std::result::Result<T, E>;
