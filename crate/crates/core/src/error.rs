use std::path::PathBuf;

use thiserror::Error;

/// Every failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("treatment arm {arm} is empty{hint}")]
    EmptyArm { arm: u8, hint: &'static str },

    #[error("propensity model did not converge after {iterations} iterations (max |theta| = {max_abs_theta:.3}); the treatment is likely perfectly separated by the covariates")]
    Separation { iterations: usize, max_abs_theta: f64 },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("no events in [0, tau]")]
    NoEvents,

    #[error("monotone partial likelihood: coefficient diverged (|beta| = {0:.3})")]
    MonotoneLikelihood(f64),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("singular information matrix")]
    SingularInformation,

    #[error("arm {arm} has {size} subjects; at least {required} are needed for smoothing")]
    ArmTooSmall { arm: u8, size: usize, required: usize },

    #[error("bootstrap replicate {replicate} failed {attempts} consecutive draws: {last}")]
    ReplicateExhausted {
        replicate: usize,
        attempts: usize,
        last: String,
    },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("{failed} of {total} Monte Carlo replicates failed (limit {limit})")]
    TooManyFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::MissingColumn(_) => "missing_column",
            Error::InvalidRow { .. } => "invalid_row",
            Error::Invalid(_) => "invalid_input",
            Error::EmptyArm { .. } => "empty_arm",
            Error::Separation { .. } => "separation",
            Error::RankDeficient => "rank_deficient",
            Error::NoEvents => "no_events",
            Error::MonotoneLikelihood(_) => "monotone_likelihood",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularInformation => "singular_information",
            Error::ArmTooSmall { .. } => "arm_too_small",
            Error::ReplicateExhausted { .. } => "replicate_exhausted",
            Error::Bracketing(_) => "bracketing",
            Error::Calibration(_) => "calibration",
            Error::TooManyFailures { .. } => "too_many_failures",
            Error::Config(_) => "config",
            Error::Json(_) => "json",
        }
    }
}
