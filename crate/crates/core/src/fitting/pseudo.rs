//! Pseudo log-likelihood for the participation parameters.
//!
//! With `η_i = α + x_iᵀβ + c(x_i; γ, ξ)` and `π_i = 1 / (1 + e^{η_i})`,
//!
//! ```text
//! ℓ(θ, ξ) = −Σ_A η_i + Σ_B d_i η_i − Σ_B d_i log(1 + e^{η_i})
//!         = −Σ_A η_i − Σ_B d_i log(1 + e^{−η_i})
//! ```
//!
//! Its gradient is `−Σ_A h_i + Σ_B d_i π_i h_i` with
//! `h = (1, x_shared, ∇_γ c)` and its Hessian is
//!
//! ```text
//! −Σ_A c''_i e eᵀ − Σ_B d_i π_i (1 − π_i) h_i h_iᵀ + Σ_B d_i π_i c''_i e eᵀ
//! ```
//!
//! where `e` selects γ and `c''` is the second γ-derivative of the cumulant.

use nalgebra::{DMatrix, DVector};

use super::optim::{bfgs_minimize, newton_minimize};
use super::{condition_number, FitOptions, FitResult, FitWarning, Multiplicity};
use crate::data::{check_same_schema, SampleA, SampleB};
use crate::error::{Error, Result};
use crate::model::{cumulant_at, logistic, softplus, Theta, Xi};

/// Rows of both samples with the outcome linear predictor cached, since ξ
/// is held fixed while θ moves.
struct Problem<'a> {
    xi: &'a Xi,
    a: &'a SampleA,
    b: &'a SampleB,
    s_a: Vec<f64>,
    s_b: Vec<f64>,
}

struct Eval {
    value: f64,
    score: DVector<f64>,
    hessian: Option<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(xi: &'a Xi, a: &'a SampleA, b: &'a SampleB) -> Result<Self> {
        check_same_schema(a, b)?;
        xi.check(a.schema())?;
        let s_a = (0..a.n()).map(|i| xi.linear_predictor(a.row(i))).collect();
        let s_b = (0..b.n()).map(|i| xi.linear_predictor(b.row(i))).collect();
        Ok(Self { xi, a, b, s_a, s_b })
    }

    fn eval(&self, theta: &Theta, with_hessian: bool) -> Eval {
        let q = theta.dim();
        let gi = q - 1;
        let mut value = 0.0;
        let mut score = DVector::zeros(q);
        let mut hess = with_hessian.then(|| DMatrix::zeros(q, q));
        let mut h = DVector::zeros(q);

        let fill_h = |h: &mut DVector<f64>, x: crate::data::Covariates<'_>, c1: f64| {
            h[0] = 1.0;
            for (k, v) in x.shared().enumerate() {
                h[k + 1] = v;
            }
            h[gi] = c1;
        };

        let mut c2_a = 0.0;
        for i in 0..self.a.n() {
            let x = self.a.row(i);
            let c = cumulant_at(self.s_a[i], theta.gamma, self.xi);
            let eta = theta.eta_x(x) + c.value;
            value -= eta;
            fill_h(&mut h, x, c.d_gamma);
            score -= &h;
            c2_a += c.d2_gamma;
        }
        if let Some(hm) = hess.as_mut() {
            hm[(gi, gi)] -= c2_a;
        }
        for i in 0..self.b.n() {
            let x = self.b.row(i);
            let d = self.b.d()[i];
            let c = cumulant_at(self.s_b[i], theta.gamma, self.xi);
            let eta = theta.eta_x(x) + c.value;
            let pi = logistic(-eta);
            value -= d * softplus(-eta);
            fill_h(&mut h, x, c.d_gamma);
            score.axpy(d * pi, &h, 1.0);
            if let Some(hm) = hess.as_mut() {
                hm.ger(-d * pi * (1.0 - pi), &h, &h, 1.0);
                hm[(gi, gi)] += d * pi * c.d2_gamma;
            }
        }
        Eval {
            value,
            score,
            hessian: hess,
        }
    }
}

/// `ℓ(θ, ξ)`.
pub fn pseudo_loglik(theta: &Theta, xi: &Xi, a: &SampleA, b: &SampleB) -> Result<f64> {
    theta.check(a.schema())?;
    Ok(Problem::new(xi, a, b)?.eval(theta, false).value)
}

/// `∇_θ ℓ(θ, ξ)`, ordered `(α, β, γ)`.
pub fn pseudo_score(theta: &Theta, xi: &Xi, a: &SampleA, b: &SampleB) -> Result<DVector<f64>> {
    theta.check(a.schema())?;
    Ok(Problem::new(xi, a, b)?.eval(theta, false).score)
}

/// Analytic `∇²_θθ ℓ(θ, ξ)`.
pub fn pseudo_hessian(theta: &Theta, xi: &Xi, a: &SampleA, b: &SampleB) -> Result<DMatrix<f64>> {
    theta.check(a.schema())?;
    Ok(Problem::new(xi, a, b)?.eval(theta, true).hessian.expect("requested"))
}

/// Observed information `−∇²_θθ ℓ` at `theta`.
pub fn observed_information(theta: &Theta, xi: &Xi, a: &SampleA, b: &SampleB) -> Result<DMatrix<f64>> {
    Ok(-pseudo_hessian(theta, xi, a, b)?)
}

/// Newton on the coordinates in `free`, the rest held at `theta0`.
fn newton_subset(problem: &Problem<'_>, theta0: &Theta, free: &[usize], opts: &FitOptions) -> (Theta, usize) {
    let base = theta0.to_vector();
    let embed = |v: &DVector<f64>| {
        let mut full = base.clone();
        for (k, &j) in free.iter().enumerate() {
            full[j] = v[k];
        }
        Theta::from_slice(full.as_slice())
    };
    let x0 = DVector::from_iterator(free.len(), free.iter().map(|&j| base[j]));
    let f = |v: &DVector<f64>| {
        let e = problem.eval(&embed(v), true);
        let hess = e.hessian.expect("requested");
        let g = DVector::from_iterator(free.len(), free.iter().map(|&j| -e.score[j]));
        let h = DMatrix::from_fn(free.len(), free.len(), |r, c| -hess[(free[r], free[c])]);
        (-e.value, g, h)
    };
    let out = newton_minimize(f, x0, opts.max_iter, opts.grad_tol);
    (embed(&out.x), out.iterations)
}

fn finish(problem: &Problem<'_>, theta: Theta, iterations: usize, opts: &FitOptions) -> FitResult<Theta> {
    let e = problem.eval(&theta, true);
    let info = -e.hessian.expect("requested");
    let gradient_norm = e.score.amax();
    let mut warnings = Vec::new();
    let cond = condition_number(&info);
    if cond > opts.cond_warn {
        warnings.push(FitWarning::IllConditioned { condition_number: cond });
    }
    FitResult {
        params: theta,
        objective_value: e.value,
        gradient_norm,
        iterations,
        converged: gradient_norm <= opts.grad_tol,
        multiplicity: Multiplicity::Unique,
        info_matrix: info,
        warnings,
        roots: Vec::new(),
    }
}

/// Ignorable fit: γ frozen at 0, so `c ≡ 0` and the estimating equation is
/// `Σ_A (1, x) = Σ_B d_i π_i (1, x)`.
pub fn fit_theta_ignorable(a: &SampleA, b: &SampleB, opts: &FitOptions) -> Result<FitResult<Theta>> {
    // c(x; 0, ξ) = 0 for every ξ, so any outcome parameter will do
    let xi = Xi::bernoulli(vec![0.0; a.schema().p() + 1]);
    let problem = Problem::new(&xi, a, b)?;
    let q = a.schema().n_shared() + 2;
    let free: Vec<usize> = (0..q - 1).collect();
    let (theta, iterations) = newton_subset(&problem, &Theta::zeros(q - 2), &free, opts);
    let mut fit = finish(&problem, theta, iterations, opts);
    // report the gradient over the free block only
    let e = problem.eval(&fit.params, false);
    fit.gradient_norm = free.iter().map(|&j| e.score[j].abs()).fold(0.0, f64::max);
    fit.converged = fit.gradient_norm <= opts.grad_tol;
    let keep = q - 1;
    fit.info_matrix = fit.info_matrix.view((0, 0), (keep, keep)).into_owned();
    if !fit.converged {
        return Err(Error::Convergence {
            iterations,
            gradient_norm: fit.gradient_norm,
            best: Box::new(fit.params),
        });
    }
    Ok(fit)
}

/// Maximum pseudo-likelihood estimate of θ with ξ fixed at `xi_hat`.
///
/// Without `init`, the ignorable sub-problem (γ = 0) is solved first and γ
/// is then released. The full problem is solved by BFGS seeded with the
/// inverse observed information and finished with Newton steps.
pub fn fit_theta_pml(
    xi_hat: &Xi,
    a: &SampleA,
    b: &SampleB,
    init: Option<&Theta>,
    opts: &FitOptions,
) -> Result<FitResult<Theta>> {
    if !a.schema().has_instrument() && !opts.allow_no_instrument {
        return Err(Error::InvalidInput(
            "no instrument column: θ may not be identifiable (set allow_no_instrument to override)".into(),
        ));
    }
    let problem = Problem::new(xi_hat, a, b)?;
    let q = a.schema().n_shared() + 2;
    let start = match init {
        Some(t) => {
            t.check(a.schema())?;
            t.clone()
        }
        None => {
            let free: Vec<usize> = (0..q - 1).collect();
            newton_subset(&problem, &Theta::zeros(q - 2), &free, opts).0
        }
    };

    let e0 = problem.eval(&start, true);
    let h0_inv = (-e0.hessian.expect("requested")).cholesky().map(|c| c.inverse());
    let f = |v: &DVector<f64>| {
        let e = problem.eval(&Theta::from_slice(v.as_slice()), false);
        (-e.value, -e.score)
    };
    let out = bfgs_minimize(f, start.to_vector(), h0_inv, opts.max_iter, opts.grad_tol);
    let mut iterations = out.iterations;
    let mut theta = Theta::from_slice(out.x.as_slice());

    let all: Vec<usize> = (0..q).collect();
    let (polished, extra) = newton_subset(&problem, &theta, &all, opts);
    iterations += extra;
    let before = problem.eval(&theta, false);
    let after = problem.eval(&polished, false);
    if after.score.amax() <= before.score.amax() && after.value.is_finite() {
        theta = polished;
    }

    let fit = finish(&problem, theta, iterations, opts);
    if !fit.converged {
        return Err(Error::Convergence {
            iterations,
            gradient_norm: fit.gradient_norm,
            best: Box::new(fit.params),
        });
    }
    Ok(fit)
}
