use rand::seq::index;
use rand::Rng;

use super::population::Population;
use crate::data::{DesignInfo, SampleA, SampleB};
use crate::error::{Error, Result};
use crate::model::{participation_prob, Theta};

/// Empty Poisson draws are retried at most this many times.
const MAX_EMPTY_REDRAWS: usize = 10_000;

/// Poisson sample with inclusion probabilities `π^A(x_i, y_i; θ)`. Returns
/// the sample and how many empty draws were discarded before it.
pub fn draw_poisson_sample<R: Rng>(pop: &Population, theta: &Theta, rng: &mut R) -> Result<(SampleA, usize)> {
    theta.check(&pop.schema)?;
    let p = pop.schema.p();
    let probs: Vec<f64> = if *theta == pop.theta_true {
        pop.pi_true.clone()
    } else {
        (0..pop.n())
            .map(|i| participation_prob(pop.row(i), pop.y[i], theta))
            .collect()
    };
    for redraws in 0..=MAX_EMPTY_REDRAWS {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, pi) in probs.iter().enumerate() {
            if rng.random::<f64>() < *pi {
                x.extend_from_slice(&pop.x[i * p..(i + 1) * p]);
                y.push(pop.y[i]);
            }
        }
        if !y.is_empty() {
            return Ok((SampleA::new(pop.schema.clone(), x, y)?, redraws));
        }
    }
    Err(Error::InvalidInput(format!(
        "Poisson sample empty in {MAX_EMPTY_REDRAWS} consecutive draws"
    )))
}

/// Simple random sample of exactly `n_b` units, in population order, with
/// `d_i = N / n_b`. The response is not carried.
pub fn draw_srswor<R: Rng>(pop: &Population, n_b: usize, rng: &mut R) -> Result<SampleB> {
    let n = pop.n();
    let design = DesignInfo::srswor(n_b, n)?;
    let mut idx = index::sample(rng, n, n_b).into_vec();
    idx.sort_unstable();
    let p = pop.schema.p();
    let mut x = Vec::with_capacity(n_b * p);
    for i in &idx {
        x.extend_from_slice(&pop.x[i * p..(i + 1) * p]);
    }
    let d = vec![n as f64 / n_b as f64; n_b];
    SampleB::new(pop.schema.clone(), x, d, design)
}

