//! A synthetic two-sample dataset shaped like a web-panel survey: eight
//! binary covariates (age as three dummies), a binary response, and a
//! health-type indicator used as the instrument.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::population::{generate_outcomes, Population, PopulationSpec};
use super::sampling::{draw_poisson_sample, draw_srswor};
use super::{substream, StreamRole};
use crate::data::{Covariates, Role, SampleA, SampleB, Schema};
use crate::error::Result;
use crate::model::{participation_prob, pi_marginal, Theta, Xi};

pub const FIXTURE_COLUMNS: [&str; 10] = ["x11", "x12", "x13", "x2", "x3", "x4", "x5", "x6", "x7", "x8"];

/// Age-group probabilities for 18-29 (reference), 30-44, 45-64, 65+.
const AGE_PROBS: [f64; 4] = [0.182, 0.330, 0.413, 0.075];
/// `P(x_j = 1)` for `x2, …, x8`.
const BINARY_PROBS: [f64; 7] = [0.603, 0.516, 0.335, 0.592, 0.167, 0.308, 0.778];
/// Participation coefficients on `x11, x12, x13, x2, …, x7`.
const BETA: [f64; 9] = [-0.8, -1.5, -2.5, -0.6, 0.2, 0.1, -0.1, 0.3, 0.1];
/// Outcome logit coefficients on `(1, x11, …, x8)`.
const XI: [f64; 11] = [-1.2, 0.1, 0.4, 0.5, 0.2, -0.5, 0.6, 0.5, 0.4, -0.6, 1.2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    pub population: usize,
    pub n_b: usize,
    pub expected_n_a: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            population: 50_000,
            n_b: 881,
            expected_n_a: 584.0,
            gamma: -0.5,
            seed: 2021,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Fixture {
    pub a: SampleA,
    pub b: SampleB,
    pub mu0: f64,
    pub theta_true: Theta,
    pub xi_true: Xi,
}

pub fn fixture_schema() -> Arc<Schema> {
    let mut roles = vec![Role::Shared; FIXTURE_COLUMNS.len()];
    roles[FIXTURE_COLUMNS.len() - 1] = Role::Instrument;
    Arc::new(Schema::new(FIXTURE_COLUMNS.iter().map(|s| s.to_string()).collect(), roles).expect("static schema"))
}

/// `α` such that `Σ π(x_i; θ, ξ) = target`; the sum decreases in `α`.
fn solve_alpha(x: &[f64], schema: &Schema, theta: &Theta, xi: &Xi, target: f64) -> f64 {
    let p = schema.p();
    let expected = |alpha: f64| {
        let t = Theta::new(alpha, theta.beta.clone(), theta.gamma);
        x.chunks_exact(p)
            .map(|row| pi_marginal(Covariates::new_unchecked(row, schema), &t, xi))
            .sum::<f64>()
    };
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Builds a population with known truth and draws one Poisson `S_A` and one
/// SRSWOR `S_B` from it.
pub fn synthetic_fixture(spec: &FixtureSpec) -> Result<Fixture> {
    let schema = fixture_schema();
    let mut rng = substream(spec.seed, 0, StreamRole::Fixture);
    let p = schema.p();
    let mut x = Vec::with_capacity(spec.population * p);
    for _ in 0..spec.population {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut group = AGE_PROBS.len() - 1;
        for (g, pr) in AGE_PROBS.iter().enumerate() {
            acc += pr;
            if u < acc {
                group = g;
                break;
            }
        }
        for g in 1..=3 {
            x.push(if group == g { 1.0 } else { 0.0 });
        }
        for pr in BINARY_PROBS {
            x.push(if rng.random::<f64>() < pr { 1.0 } else { 0.0 });
        }
    }

    let xi = Xi::bernoulli(XI.to_vec());
    let provisional = Theta::new(0.0, BETA.to_vec(), spec.gamma);
    let alpha = solve_alpha(&x, &schema, &provisional, &xi, spec.expected_n_a);
    let theta = Theta::new(alpha, BETA.to_vec(), spec.gamma);
    let y = generate_outcomes(&x, &schema, &theta, &xi, &mut rng);
    let mu0 = y.iter().sum::<f64>() / spec.population as f64;
    let pi_true = x
        .chunks_exact(p)
        .zip(&y)
        .map(|(row, yi)| participation_prob(Covariates::new_unchecked(row, &schema), *yi, &theta))
        .collect();
    let pop = Population {
        spec: PopulationSpec {
            n: spec.population,
            alpha,
            gamma: spec.gamma,
            seed: spec.seed,
            ..PopulationSpec::default()
        },
        schema,
        x,
        y,
        mu0,
        pi_true,
        theta_true: theta.clone(),
        xi_true: xi.clone(),
    };
    let (a, _) = draw_poisson_sample(&pop, &theta, &mut substream(spec.seed, 0, StreamRole::SampleA))?;
    let b = draw_srswor(&pop, spec.n_b, &mut substream(spec.seed, 0, StreamRole::SampleB))?;
    Ok(Fixture {
        a,
        b,
        mu0,
        theta_true: theta,
        xi_true: xi,
    })
}
