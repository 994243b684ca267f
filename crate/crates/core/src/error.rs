use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain violation at row {row}, column {col}: value {value}")]
    Domain { row: usize, col: usize, value: f64 },

    /// A boundary coordinate where a partial derivative of the sufficient
    /// statistic diverges (x_j = 0 for the square-root family).
    #[error("singular point: coordinate {coord} lies on the domain boundary")]
    SingularPoint { coord: usize },

    #[error("invalid model: {0}")]
    Model(String),

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence {
        what: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    /// The quadratic score-matching loss has no unique minimizer.
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("target of {target} edges unreachable: at most {achieved} edges")]
    TargetUnreachable { target: usize, achieved: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
