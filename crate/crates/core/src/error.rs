use thiserror::Error;

/// Errors raised by the analysis pipeline.
///
/// Variants fall in two families: problems with the input (schema, data,
/// arguments) and numerical failures during computation. [`Error::is_input`]
/// tells them apart, which the CLI uses to pick an exit status.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("duplicate row for subject {subject:?} at time {time:?}")]
    DuplicateRow { subject: String, time: String },

    #[error("subject {subject:?} appears in groups {first:?} and {second:?}")]
    SubjectInTwoGroups {
        subject: String,
        first: String,
        second: String,
    },

    #[error("group {group:?} has {n} complete subjects; at least 2 are required")]
    TooFewSubjects { group: String, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("time contrast undefined for t=1")]
    TimeContrastUndefined,

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("covariance matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error(
        "pooled covariance is singular or ill-conditioned (condition number {0:e}); \
         run the collinearity diagnostics and drop collinear variables"
    )]
    IllConditioned(f64),

    #[error("descriptive DA implemented for two groups; dataset has {0}")]
    NotTwoGroups(usize),

    #[error("variable {variable:?} has zero pooled within-group variance")]
    ConstantVariable { variable: String },

    #[error(
        "collinearity flags remain but every implicated variable is protected: {implicated:?} \
         (removed so far: {removed:?})"
    )]
    AllImplicatedProtected {
        implicated: Vec<String>,
        removed: Vec<String>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error stems from user input rather than a numerical failure.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Data(_)
                | Error::DuplicateRow { .. }
                | Error::SubjectInTwoGroups { .. }
                | Error::TooFewSubjects { .. }
                | Error::InvalidArgument(_)
                | Error::OutOfRange(_)
                | Error::TimeContrastUndefined
                | Error::NotTwoGroups(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
