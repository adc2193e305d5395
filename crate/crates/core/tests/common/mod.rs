#![allow(dead_code)]

use std::sync::Arc;

use npsurvey::{DesignInfo, Role, SampleA, SampleB, Schema, Theta, Xi};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Two shared covariates and one instrument.
pub fn schema3() -> Arc<Schema> {
    Arc::new(
        Schema::new(
            vec!["u1".into(), "u2".into(), "z".into()],
            vec![Role::Shared, Role::Shared, Role::Instrument],
        )
        .unwrap(),
    )
}

fn covariates(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let u1: f64 = StandardNormal.sample(rng);
        let u2: f64 = StandardNormal.sample(rng);
        x.extend_from_slice(&[u1, u2, rng.random_range(0.0..3.0)]);
    }
    x
}

/// Random binary-response `S_A` and an SRSWOR `S_B` out of `20 n_b`.
pub fn toy_samples(seed: u64, n_a: usize, n_b: usize) -> (SampleA, SampleB) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = schema3();
    let xa = covariates(&mut rng, n_a);
    let y = (0..n_a)
        .map(|i| {
            let z = xa[3 * i + 2];
            let p = 1.0 / (1.0 + (-(-1.0 + 0.8 * xa[3 * i] + z * 0.7)).exp());
            if rng.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let xb = covariates(&mut rng, n_b);
    let population = 20 * n_b;
    let a = SampleA::new(schema.clone(), xa, y).unwrap();
    let b = SampleB::new(
        schema,
        xb,
        vec![population as f64 / n_b as f64; n_b],
        DesignInfo::srswor(n_b, population).unwrap(),
    )
    .unwrap();
    (a, b)
}

pub fn theta3(alpha: f64, b1: f64, b2: f64, gamma: f64) -> Theta {
    Theta::new(alpha, vec![b1, b2], gamma)
}

pub fn xi3(c: [f64; 4]) -> Xi {
    Xi::bernoulli(c.to_vec())
}

/// `max_k |a_k − b_k| / max(‖a‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Central difference gradient of `f` at `v`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, v: &[f64], step: f64) -> Vec<f64> {
    (0..v.len())
        .map(|k| {
            let h = step * v[k].abs().max(1.0);
            let mut up = v.to_vec();
            let mut dn = v.to_vec();
            up[k] += h;
            dn[k] -= h;
            (f(&up) - f(&dn)) / (2.0 * h)
        })
        .collect()
}
