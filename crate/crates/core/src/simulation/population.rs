use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{substream, StreamRole};
use crate::data::{Covariates, Role, Schema};
use crate::error::{Error, Result};
use crate::model::{logistic, participation_prob, pi_marginal, Theta, Xi};

/// The four study settings: `(α, γ, E(n_A), μ0)`.
pub const TABLE1: [(f64, f64, usize, f64); 4] = [
    (4.5, 0.8, 500, 0.58),
    (2.7, 0.8, 2000, 0.57),
    (5.1, -0.8, 500, 0.34),
    (3.3, -0.8, 2000, 0.35),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub n: usize,
    pub alpha: f64,
    pub gamma: f64,
    /// Coefficients of `(u1, u2)` in the participation model.
    pub beta: [f64; 2],
    /// Outcome logit coefficients on `(1, u1, u2, z)` among participants.
    pub outcome_coef: [f64; 4],
    pub seed: u64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            n: 20_000,
            alpha: TABLE1[0].0,
            gamma: TABLE1[0].1,
            beta: [-0.7, 1.5],
            outcome_coef: [-1.8, 1.2, 1.2, 1.0],
            seed: 20_240_601,
        }
    }
}

impl PopulationSpec {
    /// The setting with the given `E(n_A)` and `γ`, if it is one of the four.
    pub fn table1(expected_n_a: usize, gamma: f64) -> Option<Self> {
        TABLE1
            .iter()
            .find(|(_, g, e, _)| *e == expected_n_a && (*g - gamma).abs() < 1e-12)
            .map(|(alpha, gamma, _, _)| Self {
                alpha: *alpha,
                gamma: *gamma,
                ..Self::default()
            })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidInput("population size must be at least 1".into()));
        }
        let all = [self.alpha, self.gamma, self.beta[0], self.beta[1]];
        if all.iter().chain(&self.outcome_coef).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("population parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> Theta {
        Theta::new(self.alpha, self.beta.to_vec(), self.gamma)
    }

    pub fn xi(&self) -> Xi {
        Xi::bernoulli(self.outcome_coef.to_vec())
    }

    /// Columns `u1`, `u2` (shared) and `z` (instrument).
    pub fn schema() -> Arc<Schema> {
        Arc::new(
            Schema::new(
                vec!["u1".into(), "u2".into(), "z".into()],
                vec![Role::Shared, Role::Shared, Role::Instrument],
            )
            .expect("static schema"),
        )
    }
}

#[derive(Clone, Debug)]
pub struct Population {
    pub spec: PopulationSpec,
    pub schema: Arc<Schema>,
    /// Row-major `N × p`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub mu0: f64,
    /// `π^A(x_i, y_i; θ_true)`.
    pub pi_true: Vec<f64>,
    pub theta_true: Theta,
    pub xi_true: Xi,
}

impl Population {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> Covariates<'_> {
        let p = self.schema.p();
        Covariates::new_unchecked(&self.x[i * p..(i + 1) * p], &self.schema)
    }
}

/// Draws `y` for every row of `x` from the population law implied by the
/// participant outcome model and the participation model:
/// with probability `π(x)` from `f(y | x)`, otherwise from the tilted law
/// `f(y | x) exp(γy − c)`.
pub fn generate_outcomes<R: Rng>(x: &[f64], schema: &Schema, theta: &Theta, xi: &Xi, rng: &mut R) -> Vec<f64> {
    let p = schema.p();
    x.chunks_exact(p)
        .map(|row| {
            let cx = Covariates::new_unchecked(row, schema);
            let s = xi.linear_predictor(cx);
            let participant = rng.random::<f64>() < pi_marginal(cx, theta, xi);
            let prob_one = if participant {
                logistic(s)
            } else {
                logistic(s + theta.gamma)
            };
            if rng.random::<f64>() < prob_one {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// One finite population per spec: `u ~ N(0, I₂)`, `z ~ U[0, 3]`, and a
/// binary response from the mixture law.
pub fn generate_population(spec: &PopulationSpec) -> Result<Population> {
    spec.validate()?;
    let schema = PopulationSpec::schema();
    let theta = spec.theta();
    let xi = spec.xi();
    let mut rng = substream(spec.seed, 0, StreamRole::Population);
    let mut x = Vec::with_capacity(spec.n * 3);
    for _ in 0..spec.n {
        let u1: f64 = StandardNormal.sample(&mut rng);
        let u2: f64 = StandardNormal.sample(&mut rng);
        let z: f64 = rng.random_range(0.0..=3.0);
        x.extend_from_slice(&[u1, u2, z]);
    }
    let y = generate_outcomes(&x, &schema, &theta, &xi, &mut rng);
    let mu0 = y.iter().sum::<f64>() / spec.n as f64;
    let pi_true = x
        .chunks_exact(3)
        .zip(&y)
        .map(|(row, yi)| participation_prob(Covariates::new_unchecked(row, &schema), *yi, &theta))
        .collect();
    Ok(Population {
        spec: spec.clone(),
        schema,
        x,
        y,
        mu0,
        pi_true,
        theta_true: theta,
        xi_true: xi,
    })
}
