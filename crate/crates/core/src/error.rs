use thiserror::Error;

use crate::model::Theta;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Logistic MLE diverging towards a separating hyperplane.
    #[error("perfect separation in outcome model (max |coef| = {max_abs_coef:.3})")]
    Separation { max_abs_coef: f64 },

    #[error("singular information matrix: {0}")]
    Singular(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {gradient_norm:.3e})")]
    Convergence {
        iterations: usize,
        gradient_norm: f64,
        best: Box<Theta>,
    },

    #[error("calibration equations have no root (smallest |g| = {min_norm:.3e})")]
    NoRoot { min_norm: f64 },

    #[error("empirical likelihood targets outside the convex hull: {0}")]
    HullViolation(String),

    #[error("design information: {0}")]
    Design(String),

    #[error("relative metric undefined for a zero reference value")]
    ZeroReference,
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }
}
