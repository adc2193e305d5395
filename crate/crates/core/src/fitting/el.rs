//! Empirical likelihood weights under moment constraints.
//!
//! Maximize `Σ log p_i` subject to `Σ p_i = 1` and `Σ p_i g_i = 0`. The
//! solution is `p_i = 1 / (n (1 + λᵀg_i))` where λ maximizes the concave
//! dual `Σ log(1 + λᵀg_i)`. Newton steps on λ are halved until every
//! `1 + λᵀg_i` stays positive and the dual increases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{check_same_schema, SampleA, SampleB};
use crate::error::{Error, Result};
use crate::model::{participation_prob, pi_marginal, Theta, Xi};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElOptions {
    /// Target sup-norm of `Σ p_i g_i`.
    pub tol: f64,
    pub max_iter: usize,
    /// `‖λ‖` beyond this is taken as divergence to the hull boundary.
    pub lambda_bound: f64,
}

impl Default for ElOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            lambda_bound: 1e8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ElWeights {
    pub p: Vec<f64>,
    pub lagrange: DVector<f64>,
    pub converged: bool,
    /// Sup-norm of `Σ p_i g_i` at the returned weights.
    pub residual: f64,
}

/// Solves the EL problem for constraint functions `values` (one row per
/// unit) and their targets, i.e. `g_i = values_i − target`.
pub fn el_solve(values: &DMatrix<f64>, target: &DVector<f64>, opts: &ElOptions) -> Result<ElWeights> {
    let n = values.nrows();
    let k = values.ncols();
    if n == 0 {
        return Err(Error::InvalidInput("EL needs at least one unit".into()));
    }
    if target.len() != k {
        return Err(Error::dim("EL constraint targets", k, target.len()));
    }
    let g = DMatrix::from_fn(n, k, |i, j| values[(i, j)] - target[j]);

    // target strictly outside the range of some coordinate
    for j in 0..k {
        let col = g.column(j);
        let all_pos = col.iter().all(|v| *v > 0.0);
        let all_neg = col.iter().all(|v| *v < 0.0);
        if all_pos || all_neg {
            return Err(Error::HullViolation(format!(
                "constraint {j}: target lies outside the range of the sample values"
            )));
        }
    }

    let nf = n as f64;
    let dual = |lam: &DVector<f64>| -> Option<f64> {
        let mut s = 0.0;
        for i in 0..n {
            let u = g.row(i).dot(&lam.transpose());
            if u <= -1.0 {
                return None;
            }
            s += u.ln_1p();
        }
        Some(s)
    };
    let grad_at = |lam: &DVector<f64>| -> DVector<f64> {
        let mut grad = DVector::zeros(k);
        for i in 0..n {
            let gi = g.row(i).transpose();
            let t = 1.0 + gi.dot(lam);
            grad += &gi / t;
        }
        grad
    };
    let weights = |lam: &DVector<f64>| -> Vec<f64> {
        (0..n)
            .map(|i| 1.0 / (nf * (1.0 + g.row(i).dot(&lam.transpose()))))
            .collect()
    };
    let residual = |p: &[f64]| -> DVector<f64> {
        let mut r = DVector::zeros(k);
        for (i, pi) in p.iter().enumerate() {
            r += g.row(i).transpose() * *pi;
        }
        r
    };

    let mut lam = DVector::zeros(k);
    let mut value: f64 = 0.0;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        for i in 0..n {
            let gi = g.row(i).transpose();
            let t = 1.0 + gi.dot(&lam);
            grad += &gi / t;
            hess.ger(1.0 / (t * t), &gi, &gi, 1.0);
        }
        if grad.amax() / nf <= opts.tol {
            converged = true;
            break;
        }
        let svd = hess.svd(true, true);
        let Ok(step) = svd.solve(&grad, 1e-14 * svd.singular_values.max()) else {
            break;
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let cand = &lam + &step * t;
            if let Some(v) = dual(&cand) {
                // near the optimum the dual gain drops below rounding noise
                if v >= value || grad_at(&cand).amax() < grad.amax() {
                    lam = cand;
                    value = v;
                    moved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !moved || lam.norm() > opts.lambda_bound {
            break;
        }
    }
    if lam.norm() > opts.lambda_bound || !converged {
        return Err(Error::HullViolation(format!(
            "dual did not converge (|λ| = {:.3e})",
            lam.norm()
        )));
    }

    let mut p = weights(&lam);
    let total: f64 = p.iter().sum();
    for v in p.iter_mut() {
        *v /= total;
    }
    let res = residual(&p).amax();
    Ok(ElWeights {
        p,
        lagrange: lam,
        converged,
        residual: res,
    })
}

/// EL weights over `S_A` calibrated to the bias-calibration condition
/// `Σ p_i π^A_i = N̂_B⁻¹ Σ_B d_i π(x_i)` and the covariate benchmarks
/// `Σ p_i x_i = N̂_B⁻¹ Σ_B d_i x_i`.
pub fn el_weights(theta_cal: &Theta, xi_hat: &Xi, a: &SampleA, b: &SampleB, opts: &ElOptions) -> Result<ElWeights> {
    check_same_schema(a, b)?;
    theta_cal.check(a.schema())?;
    xi_hat.check(a.schema())?;
    let p = a.schema().p();
    let n_hat_b = b.n_hat();
    let mut target = DVector::zeros(p + 1);
    for (x, d) in b.rows() {
        target[0] += d * pi_marginal(x, theta_cal, xi_hat);
        for (k, v) in x.values().iter().enumerate() {
            target[k + 1] += d * v;
        }
    }
    target /= n_hat_b;
    let values = DMatrix::from_fn(a.n(), p + 1, |i, j| {
        let x = a.row(i);
        if j == 0 {
            participation_prob(x, a.y()[i], theta_cal)
        } else {
            x.values()[j - 1]
        }
    });
    el_solve(&values, &target, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn two_point_problem() {
        let values = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let w = el_solve(&values, &DVector::from_element(1, 0.25), &ElOptions::default()).unwrap();
        assert_relative_eq!(w.p[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(w.p[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(w.lagrange[0], 4.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn sample_mean_target_gives_uniform_weights() {
        let values = DMatrix::from_row_slice(4, 2, &[0.1, 1.0, 0.4, -2.0, 0.3, 0.5, 0.2, 0.5]);
        let mean = DVector::from_vec(vec![0.25, 0.0]);
        let w = el_solve(&values, &mean, &ElOptions::default()).unwrap();
        for p in &w.p {
            assert_relative_eq!(*p, 0.25, epsilon = 1e-14);
        }
        assert_eq!(w.lagrange.amax(), 0.0);
    }

    #[test]
    fn target_outside_hull() {
        let values = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let err = el_solve(&values, &DVector::from_element(1, 3.0), &ElOptions::default()).unwrap_err();
        assert!(matches!(err, Error::HullViolation(_)));
    }

    #[test]
    fn target_outside_two_dimensional_hull() {
        // every coordinate range covers the target, but the point (0.9, 0.9)
        // lies outside the triangle
        let values = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let err = el_solve(&values, &DVector::from_vec(vec![0.9, 0.9]), &ElOptions::default()).unwrap_err();
        assert!(matches!(err, Error::HullViolation(_)));
    }
}
