//! Small dense optimizers: BFGS with Armijo backtracking, a damped Newton
//! method for polishing, and Levenberg–Marquardt for square systems.

use nalgebra::{DMatrix, DVector};

pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub iterations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Relative objective changes below this are rounding noise.
const NOISE: f64 = 1e-12;

/// Minimizes `f` by BFGS. `h0_inv` seeds the inverse-Hessian approximation.
pub(crate) fn bfgs_minimize<F>(
    f: F,
    x0: DVector<f64>,
    h0_inv: Option<DMatrix<f64>>,
    max_iter: usize,
    grad_tol: f64,
) -> Outcome
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>),
{
    let n = x0.len();
    let (mut fx, mut g) = f(&x0);
    let mut x = x0;
    let identity_scaled = |g: &DVector<f64>| DMatrix::identity(n, n) / g.norm().max(1.0);
    let mut h = h0_inv.unwrap_or_else(|| identity_scaled(&g));
    let mut it = 0;
    while it < max_iter && g.amax() > grad_tol {
        it += 1;
        let mut dir = -(&h * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h = identity_scaled(&g);
            dir = -(&h * &g);
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let xn = &x + &dir * step;
            let (fn_, gn) = f(&xn);
            // near the optimum f stops resolving decreases; fall back to
            // requiring a smaller gradient
            let noise = (fn_ - fx).abs() <= NOISE * fx.abs().max(1.0);
            if fn_.is_finite() && (fn_ <= fx + ARMIJO * step * slope || (noise && gn.amax() < g.amax())) {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            break;
        };
        let s = &xn - &x;
        if s.amax() == 0.0 {
            break;
        }
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H+ = H − ρ(s yᵀH + H y sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x = xn;
        fx = fn_;
        g = gn;
    }
    Outcome {
        x,
        iterations: it,
    }
}

/// Damped Newton on a convex-near-the-optimum objective. Stops when the
/// Hessian is not positive definite or no step makes progress.
pub(crate) fn newton_minimize<F>(f: F, x0: DVector<f64>, max_iter: usize, grad_tol: f64) -> Outcome
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
{
    let (mut fx, mut g, mut hess) = f(&x0);
    let mut x = x0;
    let mut it = 0;
    while it < max_iter && g.amax() > grad_tol {
        let Some(chol) = hess.clone().cholesky() else {
            break;
        };
        it += 1;
        let dir = -chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let xn = &x + &dir * step;
            let (fn_, gn, hn) = f(&xn);
            // Near the optimum f stalls at rounding level; accept a step
            // that shrinks the gradient without raising f beyond noise.
            let noise = 1e-12 * fx.abs().max(1.0);
            let decrease = fn_ <= fx + ARMIJO * step * g.dot(&dir);
            if fn_.is_finite() && (decrease || (fn_ <= fx + noise && gn.amax() < g.amax())) {
                accepted = Some((xn, fn_, gn, hn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn, hn)) = accepted else {
            break;
        };
        x = xn;
        fx = fn_;
        g = gn;
        hess = hn;
    }
    Outcome {
        x,
        iterations: it,
    }
}

pub(crate) struct LmOutcome {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Levenberg–Marquardt on `‖r(x)‖²`; `rj` returns `None` when the
/// residual is not finite at `x`.
pub(crate) fn levenberg_marquardt<F>(rj: F, x0: DVector<f64>, max_iter: usize, tol: f64) -> Option<LmOutcome>
where
    F: Fn(&DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let (mut r, mut j) = rj(&x0)?;
    let mut x = x0;
    let mut cost = r.norm_squared();
    let mut mu = 1e-3;
    let mut it = 0;
    while it < max_iter && cost.sqrt() > tol {
        it += 1;
        let jt = j.transpose();
        let jtj = &jt * &j;
        let grad = &jt * &r;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..a.nrows() {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-&grad)) else {
                mu *= 4.0;
                continue;
            };
            let xn = &x + &step;
            if let Some((rn, jn)) = rj(&xn) {
                let cn = rn.norm_squared();
                if cn < cost {
                    let small_step = step.amax() <= 1e-14 * (1.0 + x.amax());
                    x = xn;
                    r = rn;
                    j = jn;
                    cost = cn;
                    mu = (mu / 3.0).max(1e-15);
                    improved = !small_step;
                    break;
                }
            }
            mu *= 4.0;
            if mu > 1e16 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    Some(LmOutcome {
        x,
        residual_norm: cost.sqrt(),
        iterations: it,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (a, b) = (x[0], x[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let g = DVector::from_vec(vec![
            -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
            200.0 * (b - a * a),
        ]);
        (f, g)
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let out = bfgs_minimize(rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), None, 2000, 1e-8);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{}", out.x);
    }

    #[test]
    fn newton_on_quadratic_is_one_step() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let f = |x: &DVector<f64>| {
            let g = &a * x - &b;
            (0.5 * x.dot(&(&a * x)) - b.dot(x), g, a.clone())
        };
        let out = newton_minimize(f, DVector::zeros(2), 10, 1e-12);
        assert_eq!(out.iterations, 1);
        assert!((&a * &out.x - &b).amax() < 1e-12);
    }

    #[test]
    fn lm_finds_root_of_square_system() {
        // x² + y² = 4, x − y = 0
        let rj = |v: &DVector<f64>| {
            let r = DVector::from_vec(vec![v[0] * v[0] + v[1] * v[1] - 4.0, v[0] - v[1]]);
            let j = DMatrix::from_row_slice(2, 2, &[2.0 * v[0], 2.0 * v[1], 1.0, -1.0]);
            Some((r, j))
        };
        let out = levenberg_marquardt(rj, DVector::from_vec(vec![1.0, 0.5]), 200, 1e-12).unwrap();
        assert!(out.residual_norm <= 1e-12);
        assert!((out.x[0] - 2f64.sqrt()).abs() < 1e-10);
    }
}
