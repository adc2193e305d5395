//! Two-step estimation: the outcome MLE on `S_A`, then pseudo-likelihood
//! maximization for the participation parameters. Also hosts the
//! calibration estimator with multistart root detection and the empirical
//! likelihood weight solver used by the baseline estimator.

mod calibration;
mod diagnostics;
mod el;
mod optim;
mod outcome;
mod pseudo;

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use calibration::{calibration_equations, calibration_jacobian, fit_theta_calibration, CalibrationOptions};
pub use diagnostics::{identifiability_diagnostic, IdentifiabilityReport};
pub use el::{el_solve, el_weights, ElOptions, ElWeights};
pub use outcome::fit_outcome_mle;
pub use pseudo::{
    fit_theta_ignorable, fit_theta_pml, observed_information, pseudo_hessian, pseudo_loglik, pseudo_score,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Multiplicity {
    Unique,
    MultipleRoots(usize),
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FitWarning {
    /// Observed information is close to singular.
    IllConditioned { condition_number: f64 },
    /// Optimizer stopped short of the gradient tolerance.
    NotConverged { gradient_norm: f64 },
}

impl fmt::Display for FitWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitWarning::IllConditioned { condition_number } => write!(
                f,
                "identifiability: observed information condition number {condition_number:.3e}"
            ),
            FitWarning::NotConverged { gradient_norm } => {
                write!(f, "optimizer stopped with gradient norm {gradient_norm:.3e}")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult<P> {
    pub params: P,
    pub objective_value: f64,
    /// Sup-norm of the objective's gradient at `params`.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub multiplicity: Multiplicity,
    /// Observed information (negative Hessian of the objective) at `params`.
    pub info_matrix: DMatrix<f64>,
    pub warnings: Vec<FitWarning>,
    /// Distinct roots found by a multistart search, one per cluster.
    pub roots: Vec<P>,
}

/// Tolerances shared by the likelihood fits. Defaults: 500 iterations,
/// gradient sup-norm 1e-6, condition-number warning above 1e10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub cond_warn: f64,
    /// Fit the participation model even when no instrument column exists.
    pub allow_no_instrument: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            cond_warn: 1e10,
            allow_no_instrument: false,
        }
    }
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let max = abs.iter().cloned().fold(0.0, f64::max);
    let min = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
