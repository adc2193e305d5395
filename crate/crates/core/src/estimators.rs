//! Point estimators of the population mean.
//!
//! IPW and the residual term of AIPW use the Hájek ratio form, dividing by
//! `N̂_A = Σ_A 1/π^A_i` rather than `N`. The regression estimator averages
//! the population conditional mean `m(x)` over `S_B` with the survey
//! weights. `REG2`, `IPW2` and `DR2` are the same constructions under an
//! ignorable participation model.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{check_same_schema, SampleA, SampleB};
use crate::error::{Error, Result};
use crate::fitting::{fit_outcome_mle, fit_theta_ignorable, ElWeights, FitOptions};
use crate::model::{conditional_mean, participation_prob, Family, Theta, Xi};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Naive,
    Reg2,
    Ipw2,
    Dr2,
    Reg,
    Ipw,
    Aipw,
    El,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 8] = [
        EstimatorKind::Naive,
        EstimatorKind::Reg2,
        EstimatorKind::Ipw2,
        EstimatorKind::Dr2,
        EstimatorKind::Reg,
        EstimatorKind::Ipw,
        EstimatorKind::Aipw,
        EstimatorKind::El,
    ];

    /// The estimators with plug-in variance formulas.
    pub const PROPOSED: [EstimatorKind; 3] = [EstimatorKind::Reg, EstimatorKind::Ipw, EstimatorKind::Aipw];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::Reg => "reg",
            EstimatorKind::Aipw => "aipw",
            EstimatorKind::El => "el",
            EstimatorKind::Reg2 => "reg2",
            EstimatorKind::Ipw2 => "ipw2",
            EstimatorKind::Dr2 => "dr2",
        }
    }

    pub fn has_plugin_variance(self) -> bool {
        Self::PROPOSED.contains(&self)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown estimator `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub kind: EstimatorKind,
    pub value: f64,
    pub n_hat_a: Option<f64>,
    pub n_hat_b: Option<f64>,
}

impl MeanEstimate {
    fn new(kind: EstimatorKind, value: f64, n_hat_a: Option<f64>, n_hat_b: Option<f64>) -> Self {
        Self {
            kind,
            value,
            n_hat_a,
            n_hat_b,
        }
    }
}

/// `(Σ y_i/π_i / Σ 1/π_i, Σ 1/π_i)`.
pub fn hajek_ipw(y: &[f64], pi: &[f64]) -> (f64, f64) {
    let (num, den) = y
        .iter()
        .zip(pi)
        .fold((0.0, 0.0), |(n, d), (y, p)| (n + y / p, d + 1.0 / p));
    (num / den, den)
}

/// `Σ d_i m_i / Σ d_i`.
pub fn weighted_mean(d: &[f64], m: &[f64]) -> f64 {
    let (num, den) = d.iter().zip(m).fold((0.0, 0.0), |(n, s), (d, m)| (n + d * m, s + d));
    num / den
}

/// `N̂_A⁻¹ Σ_A (y_i − m_i)/π_i + N̂_B⁻¹ Σ_B d_i m_i`.
pub fn aipw_combine(y_a: &[f64], pi_a: &[f64], m_a: &[f64], d_b: &[f64], m_b: &[f64]) -> f64 {
    let resid: Vec<f64> = y_a.iter().zip(m_a).map(|(y, m)| y - m).collect();
    hajek_ipw(&resid, pi_a).0 + weighted_mean(d_b, m_b)
}

pub fn mu_naive(a: &SampleA) -> Result<MeanEstimate> {
    if a.n() == 0 {
        return Err(Error::InvalidInput("naive mean of an empty sample".into()));
    }
    let mean = a.y().iter().sum::<f64>() / a.n() as f64;
    Ok(MeanEstimate::new(EstimatorKind::Naive, mean, None, None))
}

fn participation_probs(a: &SampleA, theta: &Theta) -> Vec<f64> {
    a.rows().map(|(x, y)| participation_prob(x, y, theta)).collect()
}

fn ipw_kind(kind: EstimatorKind, a: &SampleA, theta: &Theta) -> Result<MeanEstimate> {
    theta.check(a.schema())?;
    let (mean, n_hat_a) = hajek_ipw(a.y(), &participation_probs(a, theta));
    Ok(MeanEstimate::new(kind, mean, Some(n_hat_a), None))
}

pub fn mu_ipw(a: &SampleA, theta: &Theta) -> Result<MeanEstimate> {
    ipw_kind(EstimatorKind::Ipw, a, theta)
}

pub fn mu_reg(b: &SampleB, theta: &Theta, xi: &Xi) -> Result<MeanEstimate> {
    theta.check(b.schema())?;
    xi.check(b.schema())?;
    let m: Vec<f64> = b.rows().map(|(x, _)| conditional_mean(x, theta, xi)).collect();
    Ok(MeanEstimate::new(
        EstimatorKind::Reg,
        weighted_mean(b.d(), &m),
        None,
        Some(b.n_hat()),
    ))
}

pub fn mu_aipw(a: &SampleA, b: &SampleB, theta: &Theta, xi: &Xi) -> Result<MeanEstimate> {
    check_same_schema(a, b)?;
    theta.check(a.schema())?;
    xi.check(a.schema())?;
    let pi_a = participation_probs(a, theta);
    let m_a: Vec<f64> = a.rows().map(|(x, _)| conditional_mean(x, theta, xi)).collect();
    let m_b: Vec<f64> = b.rows().map(|(x, _)| conditional_mean(x, theta, xi)).collect();
    let n_hat_a = pi_a.iter().map(|p| 1.0 / p).sum();
    Ok(MeanEstimate::new(
        EstimatorKind::Aipw,
        aipw_combine(a.y(), &pi_a, &m_a, b.d(), &m_b),
        Some(n_hat_a),
        Some(b.n_hat()),
    ))
}

pub fn mu_el(weights: &ElWeights, a: &SampleA) -> Result<MeanEstimate> {
    if weights.p.len() != a.n() {
        return Err(Error::dim("EL weights", a.n(), weights.p.len()));
    }
    let value = weights.p.iter().zip(a.y()).map(|(p, y)| p * y).sum();
    Ok(MeanEstimate::new(EstimatorKind::El, value, None, None))
}

#[derive(Clone, Debug)]
pub struct Baselines {
    pub reg2: MeanEstimate,
    pub ipw2: MeanEstimate,
    pub dr2: MeanEstimate,
    pub theta_ignorable: Theta,
}

/// Baselines from an already fitted ignorable propensity (γ = 0) and the
/// `S_A` outcome regression, under which `E(y | x) = E(y | x, R = 1)`.
pub fn ignorable_baselines_with(a: &SampleA, b: &SampleB, xi_hat: &Xi, theta_ign: &Theta) -> Result<Baselines> {
    check_same_schema(a, b)?;
    theta_ign.check(a.schema())?;
    xi_hat.check(a.schema())?;
    if theta_ign.gamma != 0.0 {
        return Err(Error::InvalidInput("ignorable propensity must have γ = 0".into()));
    }
    let pi_a = participation_probs(a, theta_ign);
    let m_a: Vec<f64> = a.rows().map(|(x, _)| xi_hat.participant_mean(x)).collect();
    let m_b: Vec<f64> = b.rows().map(|(x, _)| xi_hat.participant_mean(x)).collect();
    let (ipw, n_hat_a) = hajek_ipw(a.y(), &pi_a);
    let n_hat_b = b.n_hat();
    Ok(Baselines {
        reg2: MeanEstimate::new(EstimatorKind::Reg2, weighted_mean(b.d(), &m_b), None, Some(n_hat_b)),
        ipw2: MeanEstimate::new(EstimatorKind::Ipw2, ipw, Some(n_hat_a), None),
        dr2: MeanEstimate::new(
            EstimatorKind::Dr2,
            aipw_combine(a.y(), &pi_a, &m_a, b.d(), &m_b),
            Some(n_hat_a),
            Some(n_hat_b),
        ),
        theta_ignorable: theta_ign.clone(),
    })
}

/// Fits the ignorable propensity and the `S_A` outcome regression, then
/// returns `(REG2, IPW2, DR2)`.
pub fn ignorable_baselines(a: &SampleA, b: &SampleB, family: Family, opts: &FitOptions) -> Result<Baselines> {
    let xi = fit_outcome_mle(a, family)?.params;
    let theta = fit_theta_ignorable(a, b, opts)?.params;
    ignorable_baselines_with(a, b, &xi, &theta)
}
