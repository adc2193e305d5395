//! Population-mean inference from a nonignorable non-probability sample
//! combined with a reference probability sample.
//!
//! The non-probability sample `S_A` observes covariates and the response;
//! the reference sample `S_B` observes covariates and survey weights only.
//! Participation in `S_A` may depend on the response itself. The crate
//! estimates the participation model by pseudo-likelihood, builds IPW,
//! regression and augmented-IPW estimators of the mean, and provides
//! plug-in variance estimates, baselines, and a Monte-Carlo study harness.

pub mod data;
pub mod error;
pub mod estimators;
pub mod fitting;
pub mod model;
pub mod par;
pub mod simulation;
pub mod variance;

pub use data::{Covariates, DesignInfo, Role, SampleA, SampleB, Schema};
pub use error::{Error, Result};
pub use estimators::{EstimatorKind, MeanEstimate};
pub use fitting::{FitOptions, FitResult, Multiplicity};
pub use model::{Family, Theta, Xi};

/// Version of this crate, recorded in report provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
