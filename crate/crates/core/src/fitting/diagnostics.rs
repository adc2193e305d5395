use serde::{Deserialize, Serialize};

use super::{condition_number, FitResult};
use crate::model::Theta;

/// Profile curvature of γ (relative to the largest diagonal entry of the
/// information) below this raises the flag.
const CURVATURE_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    pub condition_number: f64,
    pub min_eigenvalue: f64,
    /// `1 / [I⁻¹]_γγ`, the information about γ after profiling out (α, β),
    /// divided by the largest diagonal entry of `I`.
    pub gamma_profile_curvature: f64,
    pub flag: bool,
}

/// Numerical surrogate for identifiability of θ, computed from the
/// observed information. Advisory only.
pub fn identifiability_diagnostic(fit: &FitResult<Theta>) -> IdentifiabilityReport {
    let info = &fit.info_matrix;
    let q = info.nrows();
    let eig = info.clone().symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = (0..q).map(|k| info[(k, k)].abs()).fold(0.0, f64::max);

    // Schur complement of the (α, β) block
    let g = q - 1;
    let curvature = if g == 0 {
        info[(0, 0)]
    } else {
        let aa = info.view((0, 0), (g, g)).into_owned();
        let ag = info.view((0, g), (g, 1)).into_owned();
        match aa.clone().cholesky() {
            Some(chol) => info[(g, g)] - (ag.transpose() * chol.solve(&ag))[(0, 0)],
            None => match aa.svd(true, true).pseudo_inverse(1e-14) {
                Ok(inv) => info[(g, g)] - (ag.transpose() * inv * &ag)[(0, 0)],
                Err(_) => 0.0,
            },
        }
    };
    let relative = if scale > 0.0 { curvature / scale } else { 0.0 };
    IdentifiabilityReport {
        condition_number: condition_number(info),
        min_eigenvalue,
        gamma_profile_curvature: relative,
        flag: relative < CURVATURE_FLOOR,
    }
}
