use std::path::PathBuf;

use thiserror::Error;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` must be 0 or 1, found `{value}`")]
    NonBinaryIndicator {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: population row (s=0) carries a recorded {column}")]
    OutcomeOnPopulationRow { row: usize, column: String },
    #[error("row {row}: trial row (s=1) is missing `{column}`")]
    MissingTrialValue { row: usize, column: String },
    #[error("row {row}: column `{column}` is not a number: `{value}`")]
    MalformedNumber {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: expected {expected} covariates, found {found}")]
    CovariateLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("complete or quasi-complete separation: |coefficient {index}| reached {value:.3} at iteration {iteration}")]
    Separation {
        iteration: usize,
        index: usize,
        value: f64,
    },
    #[error("design matrix is rank deficient ({0})")]
    RankDeficient(&'static str),
    #[error("need at least {needed} rows, found {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("propensity model did not converge")]
    NotConverged,
    #[error("row {row}: propensity score {value:e} is at the boundary of (0,1)")]
    DegeneratePs { row: usize, value: f64 },
    #[error("{0} arm of the trial is empty")]
    EmptyArm(Arm),
    #[error("{0} arm of the trial has zero total weight")]
    ZeroWeightArm(Arm),
    #[error("{0} arm needs at least two subjects for a variance")]
    ArmTooSmall(Arm),
    #[error("target population is empty")]
    EmptyPopulation,
    #[error("weights are required for {0} fits")]
    MissingWeights(&'static str),
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("{failed} of {total} bootstrap resamples failed (limit is 10%)")]
    TooManyFailedResamples { failed: usize, total: usize },
    #[error("degenerate replicate: {n_trial} trial rows, {n_population} population rows")]
    DegenerateReplicate { n_trial: usize, n_population: usize },
    #[error("variance method {method} does not apply to estimator {estimator}")]
    NotApplicable { estimator: String, method: String },
    #[error("invalid data: {0}")]
    InvalidSample(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Separation { .. }
            | Error::RankDeficient(_)
            | Error::NotConverged
            | Error::DegeneratePs { .. }
            | Error::ZeroWeightArm(_)
            | Error::SingularInformation
            | Error::TooManyFailedResamples { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Trial arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Treated,
    Control,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Treated => f.write_str("treated"),
            Arm::Control => f.write_str("control"),
        }
    }
}
