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

    #[error("column `{column}` not found in header")]
    MissingColumn { column: String },

    #[error("row {row}, column `{column}`: missing value")]
    MissingValue { row: usize, column: String },

    #[error("row {row}, column `{column}`: non-numeric value `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: treatment not binary (got {value})")]
    TreatmentNotBinary { row: usize, value: f64 },

    #[error("single-arm dataset: every observation has A = {arm}")]
    SingleArm { arm: u8 },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("degenerate outcome bounds ({min}, {max})")]
    DegenerateBounds { min: f64, max: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("invalid DGP specification: {0}")]
    InvalidSpec(String),

    #[error("singular design matrix")]
    Singular,

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: &'static str, iterations: usize },

    #[error("bootstrap replicate {replicate}: no resample with both arms after {attempts} attempts")]
    BootstrapSingleArm { replicate: usize, attempts: usize },
}

impl Error {
    /// True for failures of an estimation routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular | Error::NonConvergence { .. } | Error::BootstrapSingleArm { .. }
        )
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
