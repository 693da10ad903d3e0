use thiserror::Error;

/// Errors raised by the LNM-FA library.
#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error at index {index}: {message}")]
    Domain { index: usize, message: String },

    /// A precondition on the arguments was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Matrix and vector sizes disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A factorization or inversion failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A mixture component lost (almost) all of its mass.
    #[error("degenerate component {component}: effective size {mass:.4} below {threshold}")]
    DegenerateComponent { component: usize, mass: f64, threshold: f64 },

    /// Every responsibility term for an observation is -inf or NaN.
    #[error("observation {0} has no finite component log-density")]
    NoFiniteComponent(usize),

    /// A count table cell could not be parsed.
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse { path: String, row: usize, column: usize, message: String },

    /// Every restart of a fit failed.
    #[error("fit failed after {attempts} attempt(s): {last}")]
    FitFailed { attempts: usize, last: String },

    /// Every cell of a model-selection grid failed.
    #[error("all {} grid cells failed:\n{}", .0.len(), .0.join("\n"))]
    AllCellsFailed(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
