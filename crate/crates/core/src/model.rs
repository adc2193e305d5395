//! Participation and outcome models.
//!
//! The participation model is logistic in `α + x_sharedᵀβ + γy` with
//! `π^A = 1 / (1 + exp(η))`. The outcome model `f(y | x; ξ)` describes the
//! response among participants. The two are linked through the cumulant
//! `c(x; γ, ξ) = log E(e^{γy} | x, R = 1)`, which gives the marginal
//! propensity `π(x) = 1 / (1 + exp(α + x_sharedᵀβ + c))` and, by Bayes,
//! the population law of `y` given `x`.
//!
//! Everything here is a pure function of its arguments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Schema};
use crate::error::{Error, Result};

/// Probabilities handed to inverse weighting are clamped to `[ε, 1 − ε]`.
pub const PROB_EPS: f64 = 1e-12;

/// `1 / (1 + e^{-t})`, evaluated without overflow.
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^t)`.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Participation parameters `(α, β, γ)`; `β` runs over the shared columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Theta {
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub gamma: f64,
}

impl Theta {
    pub fn new(alpha: f64, beta: Vec<f64>, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn zeros(n_shared: usize) -> Self {
        Self::new(0.0, vec![0.0; n_shared], 0.0)
    }

    pub fn dim(&self) -> usize {
        self.beta.len() + 2
    }

    /// `(α, β₁, …, β_k, γ)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        v[0] = self.alpha;
        for (k, b) in self.beta.iter().enumerate() {
            v[k + 1] = *b;
        }
        v[self.dim() - 1] = self.gamma;
        v
    }

    pub fn from_slice(v: &[f64]) -> Self {
        assert!(v.len() >= 2, "theta needs at least alpha and gamma");
        Self::new(v[0], v[1..v.len() - 1].to_vec(), v[v.len() - 1])
    }

    pub fn check(&self, schema: &Schema) -> Result<()> {
        if self.beta.len() != schema.n_shared() {
            return Err(Error::dim(
                format!("beta over shared columns {:?}", schema.shared_names()),
                schema.n_shared(),
                self.beta.len(),
            ));
        }
        if !(self.alpha.is_finite() && self.gamma.is_finite() && self.beta.iter().all(|b| b.is_finite())) {
            return Err(Error::InvalidInput("theta has non-finite entries".into()));
        }
        Ok(())
    }

    /// `α + x_sharedᵀβ`.
    pub(crate) fn eta_x(&self, x: Covariates<'_>) -> f64 {
        debug_assert_eq!(self.beta.len(), x.schema().n_shared());
        self.alpha + x.shared().zip(&self.beta).map(|(v, b)| v * b).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    BernoulliLogistic,
    GaussianLinear,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::BernoulliLogistic => "bernoulli-logistic",
            Family::GaussianLinear => "gaussian-linear",
        })
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli-logistic" | "bernoulli" | "logistic" | "binary" => Ok(Family::BernoulliLogistic),
            "gaussian-linear" | "gaussian" | "normal" | "linear" => Ok(Family::GaussianLinear),
            other => Err(Error::InvalidInput(format!("unknown outcome family `{other}`"))),
        }
    }
}

/// Outcome-model parameters. `coef[0]` is the intercept, followed by one
/// coefficient per covariate column (shared and instrument alike).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Xi {
    family: Family,
    coef: Vec<f64>,
    sigma2: Option<f64>,
}

impl Xi {
    pub fn bernoulli(coef: Vec<f64>) -> Self {
        Self {
            family: Family::BernoulliLogistic,
            coef,
            sigma2: None,
        }
    }

    pub fn gaussian(coef: Vec<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self {
            family: Family::GaussianLinear,
            coef,
            sigma2: Some(sigma2),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    pub fn sigma2(&self) -> Option<f64> {
        self.sigma2
    }

    /// Length of the flattened parameter: coefficients, then σ² if present.
    pub fn dim(&self) -> usize {
        self.coef.len() + usize::from(self.sigma2.is_some())
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.coef.clone();
        v.extend(self.sigma2);
        DVector::from_vec(v)
    }

    pub fn from_slice(family: Family, v: &[f64]) -> Result<Self> {
        match family {
            Family::BernoulliLogistic => Ok(Self::bernoulli(v.to_vec())),
            Family::GaussianLinear => {
                let (coef, s2) = v.split_at(v.len() - 1);
                Self::gaussian(coef.to_vec(), s2[0])
            }
        }
    }

    pub fn check(&self, schema: &Schema) -> Result<()> {
        if self.coef.len() != schema.p() + 1 {
            return Err(Error::dim(
                format!("outcome coefficients (intercept + {schema})"),
                schema.p() + 1,
                self.coef.len(),
            ));
        }
        Ok(())
    }

    /// `ξ₀ + xᵀξ₁`, the outcome linear predictor (the mean for Gaussian).
    pub fn linear_predictor(&self, x: Covariates<'_>) -> f64 {
        debug_assert_eq!(self.coef.len(), x.values().len() + 1);
        self.coef[0] + x.values().iter().zip(&self.coef[1..]).map(|(v, b)| v * b).sum::<f64>()
    }

    /// `E(y | x, R = 1)`.
    pub fn participant_mean(&self, x: Covariates<'_>) -> f64 {
        let s = self.linear_predictor(x);
        match self.family {
            Family::BernoulliLogistic => logistic(s),
            Family::GaussianLinear => s,
        }
    }

    fn s2(&self) -> f64 {
        self.sigma2.expect("gaussian family carries sigma2")
    }
}

/// Writes `(1, x)` into the leading `p + 1` slots of `out`.
fn design_row_into(x: Covariates<'_>, out: &mut [f64]) {
    out[0] = 1.0;
    out[1..=x.values().len()].copy_from_slice(x.values());
}

/// `η^A = α + x_sharedᵀβ + γy`.
pub fn linear_predictor(x: Covariates<'_>, y: f64, theta: &Theta) -> Result<f64> {
    theta.check(x.schema())?;
    Ok(theta.eta_x(x) + theta.gamma * y)
}

/// Participation probability `π^A(x, y; θ)`, clamped to `[ε, 1 − ε]`.
pub fn participation_prob(x: Covariates<'_>, y: f64, theta: &Theta) -> f64 {
    clamp_prob(logistic(-(theta.eta_x(x) + theta.gamma * y)))
}

/// `c(x; γ, ξ)` together with its first two γ-derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cumulant {
    pub value: f64,
    pub d_gamma: f64,
    pub d2_gamma: f64,
}

impl Cumulant {
    /// Selects the derivative of the given order (0, 1 or 2).
    pub fn order(&self, order: u8) -> Result<f64> {
        match order {
            0 => Ok(self.value),
            1 => Ok(self.d_gamma),
            2 => Ok(self.d2_gamma),
            k => Err(Error::InvalidInput(format!("cumulant derivative order {k} not supported"))),
        }
    }
}

pub fn cumulant(x: Covariates<'_>, gamma: f64, xi: &Xi) -> Cumulant {
    cumulant_at(xi.linear_predictor(x), gamma, xi)
}

/// Cumulant given the outcome linear predictor `s`.
pub(crate) fn cumulant_at(s: f64, gamma: f64, xi: &Xi) -> Cumulant {
    match xi.family {
        Family::BernoulliLogistic => {
            // log(1 − p + p e^γ) = softplus(s + γ) − softplus(s)
            let q = logistic(s + gamma);
            Cumulant {
                value: if gamma == 0.0 { 0.0 } else { softplus(s + gamma) - softplus(s) },
                d_gamma: q,
                d2_gamma: q * (1.0 - q),
            }
        }
        Family::GaussianLinear => {
            let s2 = xi.s2();
            Cumulant {
                value: gamma * s + 0.5 * gamma * gamma * s2,
                d_gamma: s + gamma * s2,
                d2_gamma: s2,
            }
        }
    }
}

/// `∇_ξ c(x; γ, ξ)`.
pub fn cumulant_grad_xi(x: Covariates<'_>, gamma: f64, xi: &Xi) -> DVector<f64> {
    let mut g = DVector::zeros(xi.dim());
    let s = xi.linear_predictor(x);
    design_row_into(x, g.as_mut_slice());
    match xi.family {
        Family::BernoulliLogistic => {
            // (e^γ − 1) p (1 − p) / (1 − p + p e^γ) = logistic(s + γ) − logistic(s)
            let scale = logistic(s + gamma) - logistic(s);
            g *= scale;
        }
        Family::GaussianLinear => {
            let k = x.values().len() + 1;
            for v in g.as_mut_slice()[..k].iter_mut() {
                *v *= gamma;
            }
            g[k] = 0.5 * gamma * gamma;
        }
    }
    g
}

/// `∇_ξ ∇_γ c(x; γ, ξ)`.
pub(crate) fn cumulant_dgamma_grad_xi(x: Covariates<'_>, gamma: f64, xi: &Xi) -> DVector<f64> {
    let mut g = DVector::zeros(xi.dim());
    let s = xi.linear_predictor(x);
    design_row_into(x, g.as_mut_slice());
    match xi.family {
        Family::BernoulliLogistic => {
            let q = logistic(s + gamma);
            g *= q * (1.0 - q);
        }
        Family::GaussianLinear => {
            g[x.values().len() + 1] = gamma;
        }
    }
    g
}

/// Unclamped marginal-propensity linear predictor `α + x_sharedᵀβ + c`.
pub(crate) fn marginal_eta(x: Covariates<'_>, theta: &Theta, xi: &Xi) -> (f64, Cumulant) {
    let c = cumulant(x, theta.gamma, xi);
    (theta.eta_x(x) + c.value, c)
}

/// Marginal participation probability `π(x; θ, ξ) = pr(R = 1 | x)`, clamped.
pub fn pi_marginal(x: Covariates<'_>, theta: &Theta, xi: &Xi) -> f64 {
    clamp_prob(logistic(-marginal_eta(x, theta, xi).0))
}

/// Outcome density (or mass) among participants, `f(y | x; ξ)`.
pub fn outcome_density(y: f64, x: Covariates<'_>, xi: &Xi) -> f64 {
    let s = xi.linear_predictor(x);
    match xi.family {
        Family::BernoulliLogistic => {
            let p = logistic(s);
            if y == 1.0 {
                p
            } else {
                1.0 - p
            }
        }
        Family::GaussianLinear => normal_pdf(y, s, xi.s2()),
    }
}

fn normal_pdf(y: f64, mean: f64, var: f64) -> f64 {
    (-(y - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

/// Population conditional density `pr(y | x)`:
/// `π f(y|x) + (1 − π) f(y|x) exp(γy − c)`.
pub fn conditional_density(y: f64, x: Covariates<'_>, theta: &Theta, xi: &Xi) -> f64 {
    let pi = pi_marginal(x, theta, xi);
    let s = xi.linear_predictor(x);
    let gamma = theta.gamma;
    match xi.family {
        Family::BernoulliLogistic => {
            // the tilted law is Bernoulli(logistic(s + γ))
            let (p, q) = (logistic(s), logistic(s + gamma));
            if y == 1.0 {
                pi * p + (1.0 - pi) * q
            } else {
                pi * (1.0 - p) + (1.0 - pi) * (1.0 - q)
            }
        }
        Family::GaussianLinear => {
            // the tilted law is N(s + γσ², σ²)
            let s2 = xi.s2();
            pi * normal_pdf(y, s, s2) + (1.0 - pi) * normal_pdf(y, s + gamma * s2, s2)
        }
    }
}

/// `m(x; θ, ξ) = E(y | x) = π ∇_γc(x; 0, ξ) + (1 − π) ∇_γc(x; γ, ξ)`.
pub fn conditional_mean(x: Covariates<'_>, theta: &Theta, xi: &Xi) -> f64 {
    let s = xi.linear_predictor(x);
    let c = cumulant_at(s, theta.gamma, xi);
    let c0 = cumulant_at(s, 0.0, xi);
    let pi = clamp_prob(logistic(-(theta.eta_x(x) + c.value)));
    pi * c0.d_gamma + (1.0 - pi) * c.d_gamma
}

/// Analytic `(∇_θ m, ∇_ξ m)`.
pub fn conditional_mean_grads(x: Covariates<'_>, theta: &Theta, xi: &Xi) -> (DVector<f64>, DVector<f64>) {
    let s = xi.linear_predictor(x);
    let c = cumulant_at(s, theta.gamma, xi);
    let c0 = cumulant_at(s, 0.0, xi);
    let pi = logistic(-(theta.eta_x(x) + c.value));
    let w = pi * (1.0 - pi);
    let gap = c0.d_gamma - c.d_gamma;

    // ∇_θ π = −π(1 − π) h with h = (1, x_shared, ∇_γ c)
    let q = theta.dim();
    let mut g_theta = DVector::zeros(q);
    g_theta[0] = -w * gap;
    for (k, v) in x.shared().enumerate() {
        g_theta[k + 1] = -w * v * gap;
    }
    g_theta[q - 1] = -w * c.d_gamma * gap + (1.0 - pi) * c.d2_gamma;

    let grad_c = cumulant_grad_xi(x, theta.gamma, xi);
    let grad_c1_0 = cumulant_dgamma_grad_xi(x, 0.0, xi);
    let grad_c1 = cumulant_dgamma_grad_xi(x, theta.gamma, xi);
    let g_xi = grad_c * (-w * gap) + grad_c1_0 * pi + grad_c1 * (1.0 - pi);
    (g_theta, g_xi)
}

/// `log f(y | x; ξ)`.
pub fn outcome_loglik(x: Covariates<'_>, y: f64, xi: &Xi) -> f64 {
    let s = xi.linear_predictor(x);
    match xi.family {
        Family::BernoulliLogistic => y * s - softplus(s),
        Family::GaussianLinear => {
            let s2 = xi.s2();
            -0.5 * (2.0 * PI * s2).ln() - (y - s).powi(2) / (2.0 * s2)
        }
    }
}

/// `∇_ξ log f(y | x; ξ)`.
pub fn outcome_score(x: Covariates<'_>, y: f64, xi: &Xi) -> DVector<f64> {
    let mut g = DVector::zeros(xi.dim());
    design_row_into(x, g.as_mut_slice());
    let s = xi.linear_predictor(x);
    match xi.family {
        Family::BernoulliLogistic => {
            g *= y - logistic(s);
        }
        Family::GaussianLinear => {
            let s2 = xi.s2();
            let r = y - s;
            let k = x.values().len() + 1;
            for v in g.as_mut_slice()[..k].iter_mut() {
                *v *= r / s2;
            }
            g[k] = -0.5 / s2 + r * r / (2.0 * s2 * s2);
        }
    }
    g
}

/// `∇²_ξξ log f(y | x; ξ)`.
pub fn outcome_hessian(x: Covariates<'_>, y: f64, xi: &Xi) -> DMatrix<f64> {
    let r_dim = xi.dim();
    let k = x.values().len() + 1;
    let mut row = vec![0.0; k];
    design_row_into(x, &mut row);
    let s = xi.linear_predictor(x);
    let mut h = DMatrix::zeros(r_dim, r_dim);
    match xi.family {
        Family::BernoulliLogistic => {
            let p = logistic(s);
            let w = p * (1.0 - p);
            for a in 0..k {
                for b in 0..k {
                    h[(a, b)] = -w * row[a] * row[b];
                }
            }
        }
        Family::GaussianLinear => {
            let s2 = xi.s2();
            let r = y - s;
            for a in 0..k {
                for b in 0..k {
                    h[(a, b)] = -row[a] * row[b] / s2;
                }
                let cross = -row[a] * r / (s2 * s2);
                h[(a, k)] = cross;
                h[(k, a)] = cross;
            }
            h[(k, k)] = 0.5 / (s2 * s2) - r * r / (s2 * s2 * s2);
        }
    }
    h
}
