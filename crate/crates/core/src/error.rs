use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

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

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("missing covariate value at row {row}")]
    MissingCovariate { row: usize },

    #[error("non-numeric value `{value}` in column `{column}` at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate unit id `{0}`")]
    DuplicateId(String),

    #[error("treatment group `{label}` has {size} unit(s); at least 2 are required")]
    GroupTooSmall { label: String, size: usize },

    #[error("invalid cohort: {0}")]
    InvalidCohort(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("multinomial logit failed to converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("empty common support")]
    EmptySupport,

    #[error("treatment group `{0}` emptied by common-support trimming")]
    GroupEmptied(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("covariate `{0}` has zero standard deviation in the reference group")]
    ZeroDelta(String),

    #[error("empty matched group `{0}`")]
    EmptyMatchedGroup(String),

    #[error("cohort has no outcome column")]
    MissingOutcomes,

    #[error("covariance matrix of group {group} is not positive definite")]
    NotPositiveDefinite { group: usize },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
