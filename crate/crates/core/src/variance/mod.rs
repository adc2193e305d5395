//! Plug-in asymptotic variances for the IPW, REG and AIPW estimators, the
//! design-based component, and Wald intervals.
//!
//! Every population average `N⁻¹ Σ_U g(x_i, y_i)` appearing in the
//! asymptotic variances is estimated by the Hájek IPW average
//! `N̂_A⁻¹ Σ_A g(x_i, y_i) / π̂^A_i` at the fitted `(θ̂, ξ̂)`, with the point
//! estimate of the same kind standing in for `μ0`.

mod design;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub use design::{design_variance, design_variance_scalar, hajek_variance, pairwise_variance, srswor_variance};

use crate::data::{check_same_schema, SampleA, SampleB};
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, MeanEstimate};
use crate::fitting::condition_number;
use crate::model::{
    conditional_mean, conditional_mean_grads, cumulant, cumulant_grad_xi, outcome_hessian, outcome_score,
    participation_prob, pi_marginal, Theta, Xi,
};

/// Matrices above this condition number are inverted by pseudo-inverse.
pub const SINGULAR_CONDITION: f64 = 1e10;

#[derive(Clone, Debug, PartialEq)]
pub enum VarianceWarning {
    /// `V22` or `V33` was ill-conditioned and pseudo-inverted.
    PseudoInverse { matrix: &'static str, condition_number: f64 },
    /// The assembled variance was negative and set to 0.
    Floored { raw: f64 },
}

impl fmt::Display for VarianceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarianceWarning::PseudoInverse {
                matrix,
                condition_number,
            } => write!(f, "{matrix} condition number {condition_number:.3e}; used pseudo-inverse"),
            VarianceWarning::Floored { raw } => write!(f, "negative plug-in variance {raw:.3e} floored at 0"),
        }
    }
}

/// Plug-in estimates of the matrices entering the asymptotic variances.
/// Row-vector quantities (`V12`, `V12e`, `V13e`, `V12a`) are stored as
/// column vectors.
#[derive(Clone, Debug)]
pub struct VarianceComponents {
    pub kind: EstimatorKind,
    pub v12: DVector<f64>,
    pub v22: DMatrix<f64>,
    pub v23: DMatrix<f64>,
    pub v33: DMatrix<f64>,
    pub v12e: DVector<f64>,
    pub v13e: DVector<f64>,
    pub v12a: DVector<f64>,
    pub hbar: f64,
    pub mu_plug: f64,
    /// `N̂_A = Σ_A 1/π̂^A`.
    pub n_hat_a: f64,
}

/// Per-unit quantities on `S_A`.
struct UnitA {
    pi_a: f64,
    y: f64,
    pi: f64,
    m: f64,
    h: DVector<f64>,
    h_a: DVector<f64>,
    score_xi: DVector<f64>,
}

fn units_a(a: &SampleA, theta: &Theta, xi: &Xi) -> Vec<UnitA> {
    let q = theta.dim();
    a.rows()
        .map(|(x, y)| {
            let c = cumulant(x, theta.gamma, xi);
            let mut h = DVector::zeros(q);
            let mut h_a = DVector::zeros(q);
            h[0] = 1.0;
            h_a[0] = 1.0;
            for (k, v) in x.shared().enumerate() {
                h[k + 1] = v;
                h_a[k + 1] = v;
            }
            h[q - 1] = c.d_gamma;
            h_a[q - 1] = y;
            UnitA {
                pi_a: participation_prob(x, y, theta),
                y,
                pi: pi_marginal(x, theta, xi),
                m: conditional_mean(x, theta, xi),
                h,
                h_a,
                score_xi: outcome_score(x, y, xi),
            }
        })
        .collect()
}

/// `V33` both ways: `N̂_A⁻¹ Σ_A π^A ∇²log f / π^A` term by term, and the
/// cancelled form `N̂_A⁻¹ Σ_A ∇²log f`.
pub fn v33_both_paths(a: &SampleA, theta: &Theta, xi: &Xi) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = xi.dim();
    let mut weighted = DMatrix::zeros(r, r);
    let mut cancelled = DMatrix::zeros(r, r);
    let mut n_hat_a = 0.0;
    for (x, y) in a.rows() {
        let pa = participation_prob(x, y, theta);
        let hess = outcome_hessian(x, y, xi);
        weighted += &hess * pa / pa;
        cancelled += hess;
        n_hat_a += 1.0 / pa;
    }
    (weighted / n_hat_a, cancelled / n_hat_a)
}

pub fn estimate_components(
    kind: EstimatorKind,
    a: &SampleA,
    b: &SampleB,
    theta: &Theta,
    xi: &Xi,
    mu_hat: f64,
) -> Result<VarianceComponents> {
    if !kind.has_plugin_variance() {
        return Err(Error::InvalidInput(format!("no plug-in variance for estimator `{kind}`")));
    }
    check_same_schema(a, b)?;
    theta.check(a.schema())?;
    xi.check(a.schema())?;
    if a.n() == 0 {
        return Err(Error::InvalidInput("variance needs a nonempty S_A".into()));
    }
    let q = theta.dim();
    let r = xi.dim();
    let units = units_a(a, theta, xi);
    let n_hat_a: f64 = units.iter().map(|u| 1.0 / u.pi_a).sum();
    let hbar = units.iter().map(|u| (u.y - u.m) / u.pi_a).sum::<f64>() / n_hat_a;

    let mut v12 = DVector::zeros(q);
    let mut v12a = DVector::zeros(q);
    let mut v22 = DMatrix::zeros(q, q);
    let mut v23 = DMatrix::zeros(q, r);
    let mut v12e = DVector::zeros(q);
    let mut v13e = DVector::zeros(r);
    for (u, (x, y)) in units.iter().zip(a.rows()) {
        let w = 1.0 / u.pi_a;
        let one_minus = 1.0 - u.pi_a;
        v12.axpy(w * one_minus * (y - mu_hat), &u.h_a, 1.0);
        v12a.axpy(w * one_minus * (y - u.m - hbar), &u.h_a, 1.0);
        let pq = u.pi * (1.0 - u.pi);
        v22.ger(-w * pq, &u.h, &u.h, 1.0);
        v23.ger(-w * pq, &u.h, &cumulant_grad_xi(x, theta.gamma, xi), 1.0);
        let (gt, gx) = conditional_mean_grads(x, theta, xi);
        v12e.axpy(w, &gt, 1.0);
        v13e.axpy(w, &gx, 1.0);
    }
    let (_, v33) = v33_both_paths(a, theta, xi);
    Ok(VarianceComponents {
        kind,
        v12: v12 / n_hat_a,
        v22: v22 / n_hat_a,
        v23: v23 / n_hat_a,
        v33,
        v12e: v12e / n_hat_a,
        v13e: v13e / n_hat_a,
        v12a: v12a / n_hat_a,
        hbar,
        mu_plug: mu_hat,
        n_hat_a,
    })
}

/// `M⁻¹ v`, falling back to the pseudo-inverse when `M` is ill-conditioned.
fn solve_sym(
    m: &DMatrix<f64>,
    v: &DVector<f64>,
    name: &'static str,
    warnings: &mut Vec<VarianceWarning>,
) -> Result<DVector<f64>> {
    let cond = condition_number(m);
    if cond.is_finite() && cond <= SINGULAR_CONDITION {
        if let Some(x) = m.clone().lu().solve(v) {
            return Ok(x);
        }
    }
    warnings.push(VarianceWarning::PseudoInverse {
        matrix: name,
        condition_number: cond,
    });
    let pinv = m
        .clone()
        .pseudo_inverse(1e-12 * m.amax().max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Singular(format!("{name}: {e}")))?;
    Ok(pinv * v)
}

#[derive(Clone, Debug)]
pub struct PluginVariance {
    pub kind: EstimatorKind,
    /// `σ̂²`, floored at 0.
    pub sigma2: f64,
    /// Assembled value before flooring.
    pub raw: f64,
    pub sa_term: f64,
    pub design_term: f64,
    pub floored: bool,
    pub warnings: Vec<VarianceWarning>,
}

/// Assembles `σ̂²` for `kind` from its plug-in components: the `S_A` term
/// `N⁻¹ Σ π^A(1 − π^A)[·]²` by the IPW plug-in rule plus the design-based
/// variance of the `S_B` summand.
pub fn sigma2_plugin(
    comp: &VarianceComponents,
    a: &SampleA,
    b: &SampleB,
    theta: &Theta,
    xi: &Xi,
    threads: usize,
) -> Result<PluginVariance> {
    check_same_schema(a, b)?;
    let kind = comp.kind;
    let mut warnings = Vec::new();
    let units = units_a(a, theta, xi);
    let mu = comp.mu_plug;

    // coefficients on h and on ∇_ξ log f inside the bracket
    let lead = match kind {
        EstimatorKind::Ipw => &comp.v12,
        EstimatorKind::Reg => &comp.v12e,
        EstimatorKind::Aipw => &comp.v12a,
        k => return Err(Error::InvalidInput(format!("no plug-in variance for estimator `{k}`"))),
    };
    let bh = solve_sym(&comp.v22, lead, "V22", &mut warnings)?;
    let mut rhs = comp.v23.transpose() * &bh;
    if kind == EstimatorKind::Reg {
        rhs -= &comp.v13e;
    }
    let cs = solve_sym(&comp.v33, &rhs, "V33", &mut warnings)?;

    let mut sa = 0.0;
    let mut m_bar = 0.0;
    for u in &units {
        let direct = match kind {
            EstimatorKind::Ipw => (u.y - mu) / u.pi_a,
            EstimatorKind::Aipw => (u.y - u.m - comp.hbar) / u.pi_a,
            _ => 0.0,
        };
        let bracket = direct + bh.dot(&u.h) + cs.dot(&u.score_xi);
        // π^A(1 − π^A)[·]² / π^A
        sa += (1.0 - u.pi_a) * bracket * bracket;
        m_bar += u.m / u.pi_a;
    }
    let sa_term = sa / comp.n_hat_a;
    let m_bar = m_bar / comp.n_hat_a;

    let q = theta.dim();
    let g: Vec<f64> = b
        .rows()
        .map(|(x, _)| {
            let c = cumulant(x, theta.gamma, xi);
            let pi = pi_marginal(x, theta, xi);
            let mut h = DVector::zeros(q);
            h[0] = 1.0;
            for (k, v) in x.shared().enumerate() {
                h[k + 1] = v;
            }
            h[q - 1] = c.d_gamma;
            let lin = pi * bh.dot(&h);
            match kind {
                EstimatorKind::Ipw => lin,
                EstimatorKind::Reg => conditional_mean(x, theta, xi) - mu - lin,
                _ => conditional_mean(x, theta, xi) - m_bar - lin,
            }
        })
        .collect();
    let design_term = design_variance_scalar(&g, b, threads)?;

    let raw = sa_term + design_term;
    let floored = raw < 0.0;
    if floored {
        warnings.push(VarianceWarning::Floored { raw });
    }
    Ok(PluginVariance {
        kind,
        sigma2: raw.max(0.0),
        raw,
        sa_term,
        design_term,
        floored,
        warnings,
    })
}

/// The population size used in `se = sqrt(σ̂² / N)`: the design's `N` when
/// known, otherwise `N̂_B`.
pub fn variance_population(b: &SampleB) -> f64 {
    b.design().population_size().map(|n| n as f64).unwrap_or_else(|| b.n_hat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Two-sided standard normal quantile for `level`.
pub fn normal_quantile(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("confidence level {level} outside (0, 1)")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// `μ̂ ± z sqrt(σ̂² / n)`.
pub fn wald_ci(mu_hat: &MeanEstimate, sigma2: f64, n: f64, level: f64) -> Result<IntervalEstimate> {
    if !(sigma2 >= 0.0) || !(n > 0.0) {
        return Err(Error::InvalidInput(format!(
            "Wald interval needs σ² ≥ 0 and n > 0 (got {sigma2}, {n})"
        )));
    }
    let z = normal_quantile(level)?;
    let se = (sigma2 / n).sqrt();
    Ok(IntervalEstimate {
        estimate: mu_hat.value,
        se,
        ci_low: mu_hat.value - z * se,
        ci_high: mu_hat.value + z * se,
        level,
    })
}

/// Components, `σ̂²` and the Wald interval in one call.
pub fn plugin_interval(
    mu_hat: &MeanEstimate,
    a: &SampleA,
    b: &SampleB,
    theta: &Theta,
    xi: &Xi,
    level: f64,
    threads: usize,
) -> Result<(IntervalEstimate, PluginVariance)> {
    let comp = estimate_components(mu_hat.kind, a, b, theta, xi, mu_hat.value)?;
    let var = sigma2_plugin(&comp, a, b, theta, xi, threads)?;
    let ci = wald_ci(mu_hat, var.sigma2, variance_population(b), level)?;
    Ok((ci, var))
}
