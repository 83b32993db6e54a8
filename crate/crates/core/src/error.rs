use thiserror::Error;

/// Errors raised by data ingestion, model fitting and resampling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dataset has tied event times ({count} duplicated); rerun with jitter enabled")]
    TiedEvents { count: usize },

    #[error("singular information matrix for cause {cause}: covariate `{column}` carries no information")]
    SingularInformation { cause: u32, column: String },

    #[error("cause {cause} model did not converge: {reason}")]
    NonConvergence { cause: u32, reason: String },

    #[error("refused: {0}")]
    Refused(String),

    #[error("refit failed for perturbed subject {subject}: {source}")]
    PerturbedRefit {
        subject: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("bootstrap replicate {replicate} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        replicate: usize,
        attempts: usize,
        last: String,
    },

    #[error("too many failed replications: {failed} of {total} ({first})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularInformation { .. }
                | Error::NonConvergence { .. }
                | Error::PerturbedRefit { .. }
                | Error::RetriesExhausted { .. }
                | Error::TooManyFailures { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
