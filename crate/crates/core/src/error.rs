use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("quadrature did not converge (achieved relative error {achieved:.3e})")]
    Quadrature { achieved: f64 },
    #[error("degenerate measure: total weight {0:.3e}")]
    DegenerateMeasure(f64),
    #[error("recurrence lost positivity at index {index} (beta = {value:.3e})")]
    Stability { index: usize, value: f64 },
    #[error("invalid chain coefficients: {0}")]
    InvalidCoefficients(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("thermal state preparation failed: {0}")]
    Preparation(String),
    #[error("ill-posed operator basis: {0}")]
    IllPosedBasis(String),
    #[error("step budget of {steps} exhausted before convergence")]
    BudgetExceeded {
        steps: usize,
        last: Option<Box<crate::linalg::CMat>>,
    },
    #[error("fit error: {0}")]
    Fit(String),
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
