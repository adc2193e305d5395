mod common;

use std::sync::Arc;

use common::{theta3, toy_samples, xi3};
use nalgebra::{DMatrix, DVector};
use npsurvey::data::DenseInclusion;
use npsurvey::estimators::{mu_aipw, mu_ipw, mu_reg};
use npsurvey::model::{conditional_mean, cumulant, outcome_score, participation_prob};
use npsurvey::variance::{
    design_variance, estimate_components, hajek_variance, pairwise_variance, sigma2_plugin, srswor_variance,
    v33_both_paths,
};
use npsurvey::{DesignInfo, EstimatorKind, Role, SampleA, SampleB, Schema, Theta, Xi};
use proptest::prelude::*;

fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, rel: f64) -> bool {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    (a - b).amax() <= rel * scale
}

fn srswor_pairwise(g: &DMatrix<f64>, n: usize, big_n: usize, n_hat: f64) -> DMatrix<f64> {
    let f = n as f64 / big_n as f64;
    let joint = (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64;
    pairwise_variance(g, |_| f, |_, _| joint, n_hat, 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn srswor_closed_form_matches_double_sum(
        (n, k, values) in (2usize..40, 1usize..4).prop_flat_map(|(n, k)| {
            (Just(n), Just(k), prop::collection::vec(-10.0..10.0f64, n * k))
        }),
        extra in 0usize..500,
    ) {
        let big_n = n + extra;
        let g = DMatrix::from_row_slice(n, k, &values);
        let n_hat = big_n as f64;
        let fast = srswor_variance(&g, n, big_n, n_hat).unwrap();
        let slow = srswor_pairwise(&g, n, big_n, n_hat);
        prop_assert!(close(&fast, &slow, 1e-12), "{} vs {}", fast, slow);
        let par = {
            let f = n as f64 / big_n as f64;
            let joint = (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64;
            pairwise_variance(&g, |_| f, |_, _| joint, n_hat, 3)
        };
        prop_assert_eq!(&par, &slow);
        // the Hájek approximation is exact here
        let hajek = hajek_variance(&g, &vec![n as f64 / big_n as f64; n], n_hat).unwrap();
        prop_assert!(close(&fast, &hajek, 1e-12));
    }

    #[test]
    fn v33_paths_agree(seed in 0u64..5000, alpha in -1.0..3.0f64, gamma in -1.5..1.5f64, c in prop::array::uniform4(-1.0..1.0f64)) {
        let (a, _) = toy_samples(seed, 30, 5);
        let (weighted, cancelled) = v33_both_paths(&a, &theta3(alpha, 0.3, -0.2, gamma), &xi3(c));
        prop_assert!(close(&weighted, &cancelled, 1e-12));
    }

    #[test]
    fn plugin_variance_is_nonnegative_and_finite(seed in 0u64..5000, alpha in 0.0..3.0f64, gamma in -1.5..1.5f64, c in prop::array::uniform4(-1.0..1.0f64)) {
        let (a, b) = toy_samples(seed, 40, 60);
        let t = theta3(alpha, 0.4, -0.3, gamma);
        let xi = xi3(c);
        for kind in EstimatorKind::PROPOSED {
            let mu = match kind {
                EstimatorKind::Reg => mu_reg(&b, &t, &xi),
                EstimatorKind::Ipw => mu_ipw(&a, &t),
                _ => mu_aipw(&a, &b, &t, &xi),
            }.unwrap().value;
            let comp = estimate_components(kind, &a, &b, &t, &xi, mu).unwrap();
            let q = t.dim();
            let r = xi.dim();
            prop_assert_eq!((comp.v22.nrows(), comp.v22.ncols()), (q, q));
            prop_assert_eq!((comp.v23.nrows(), comp.v23.ncols()), (q, r));
            prop_assert_eq!((comp.v33.nrows(), comp.v33.ncols()), (r, r));
            prop_assert!(comp.v22.iter().chain(comp.v23.iter()).chain(comp.v33.iter()).all(|v| v.is_finite()));
            prop_assert!(close(&comp.v22, &comp.v22.transpose(), 1e-14));
            // V22 is negative semidefinite
            let eig = comp.v22.clone().symmetric_eigen();
            prop_assert!(eig.eigenvalues.iter().all(|e| *e <= 1e-12 * comp.v22.amax()));
            let var = sigma2_plugin(&comp, &a, &b, &t, &xi, 1).unwrap();
            prop_assert!(var.sigma2 >= 0.0 && var.sigma2.is_finite());
            prop_assert_eq!(var.floored, var.raw < 0.0);
        }
    }
}

/// Population `{1, 2, 3, 4}`, SRSWOR of size 2, `d = 2`, so `N̂_B = N`.
#[test]
fn enumeration_oracle_on_four_units() {
    let population = [1.0, 2.0, 3.0, 4.0];
    let (big_n, n) = (4usize, 2usize);
    let g = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
    let fast = srswor_variance(&g, n, big_n, 4.0).unwrap();
    let slow = srswor_pairwise(&g, n, big_n, 4.0);
    assert!((fast[(0, 0)] - slow[(0, 0)]).abs() <= 1e-12);
    assert!((fast[(0, 0)] - 0.5).abs() <= 1e-15);

    let mut estimates = Vec::new();
    let mut totals = Vec::new();
    for i in 0..big_n {
        for j in i + 1..big_n {
            let g = DMatrix::from_column_slice(2, 1, &[population[i], population[j]]);
            estimates.push(srswor_pairwise(&g, n, big_n, 4.0)[(0, 0)]);
            totals.push(2.0 * (population[i] + population[j]));
        }
    }
    assert_eq!(estimates.len(), 6);
    let mean_estimate = estimates.iter().sum::<f64>() / 6.0;
    // exact design variance of the HT total, scaled by N⁻¹
    let total: f64 = population.iter().sum();
    let var_total = totals.iter().map(|t| (t - total).powi(2)).sum::<f64>() / 6.0;
    assert!((mean_estimate - var_total / big_n as f64).abs() <= 1e-12);
    assert!((mean_estimate - 5.0 / 3.0).abs() <= 1e-12);
}

#[test]
fn general_ht_and_census_paths() {
    let (_, b) = toy_samples(8, 5, 30);
    let g = DMatrix::from_fn(b.n(), 2, |i, j| b.x()[3 * i + j]);
    let (n, big_n) = (b.n(), 600);
    let f = n as f64 / big_n as f64;
    let joint = (n * (n - 1)) as f64 / (big_n * (big_n - 1)) as f64;
    let dense = DMatrix::from_fn(n, n, |i, j| if i == j { f } else { joint });
    let inclusion = DenseInclusion::new(n, dense.as_slice().to_vec()).unwrap();
    let general = SampleB::new(
        b.schema_arc().clone(),
        b.x().to_vec(),
        b.d().to_vec(),
        DesignInfo::GeneralHt {
            inclusion: Arc::new(inclusion),
            population: Some(big_n),
        },
    )
    .unwrap();
    let via_general = design_variance(&g, &general, 2).unwrap();
    let via_srswor = design_variance(&g, &b, 1).unwrap();
    assert!(close(&via_general, &via_srswor, 1e-12));

    let census = srswor_variance(&g, n, n, n as f64).unwrap();
    assert!(census.amax() == 0.0);
    let constant = DMatrix::from_element(n, 1, 2.5);
    assert!(srswor_variance(&constant, n, big_n, big_n as f64).unwrap().amax() <= 1e-12);
}

#[test]
fn two_unit_v22_by_hand() {
    let schema = Arc::new(
        Schema::new(vec!["x".into(), "z".into()], vec![Role::Shared, Role::Instrument]).unwrap(),
    );
    let a = SampleA::new(schema.clone(), vec![0.0, 0.0, 1.0, 1.0], vec![1.0, 0.0]).unwrap();
    let b = SampleB::new(schema, vec![0.5, 0.5], vec![10.0], DesignInfo::srswor(1, 10).unwrap()).unwrap();
    let t = Theta::new(0.5, vec![-1.0], 0.8);
    let xi = Xi::bernoulli(vec![-0.2, 0.3, 0.6]);
    let comp = estimate_components(EstimatorKind::Ipw, &a, &b, &t, &xi, 0.5).unwrap();
    let expected = DMatrix::from_row_slice(
        3,
        3,
        &[
            -0.214172650692514,
            -0.063842646195106657,
            -0.14925763344048369,
            -0.063842646195106657,
            -0.063842646195106657,
            -0.052196118021780442,
            -0.14925763344048369,
            -0.052196118021780442,
            -0.10534259337291678,
        ],
    );
    assert!((&comp.v22 - &expected).amax() <= 1e-14, "{}", comp.v22);
}

/// Gaussian outcomes with `y = m(x)` exactly and a census `S_B`: the AIPW
/// residual term and the design term both vanish.
#[test]
fn aipw_residual_collapse() {
    let (a0, _) = toy_samples(17, 40, 5);
    let t = theta3(1.0, 0.4, -0.6, 0.5);
    let xi = Xi::gaussian(vec![0.3, 0.5, -0.2, 0.4], 0.8).unwrap();
    let y: Vec<f64> = a0.rows().map(|(x, _)| conditional_mean(x, &t, &xi)).collect();
    let a = SampleA::new(a0.schema_arc().clone(), a0.x().to_vec(), y).unwrap();
    let nb = 30;
    let b = SampleB::new(
        a.schema_arc().clone(),
        toy_samples(18, 5, nb).1.x().to_vec(),
        vec![1.0; nb],
        DesignInfo::srswor(nb, nb).unwrap(),
    )
    .unwrap();
    let mu = mu_aipw(&a, &b, &t, &xi).unwrap().value;
    let comp = estimate_components(EstimatorKind::Aipw, &a, &b, &t, &xi, mu).unwrap();
    assert!(comp.hbar.abs() < 1e-15);
    let var = sigma2_plugin(&comp, &a, &b, &t, &xi, 1).unwrap();
    assert_eq!(var.design_term, 0.0);

    // direct evaluation of the remaining S_A term
    let bh = comp.v22.clone().lu().solve(&comp.v12a).unwrap();
    let cs = comp.v33.clone().lu().solve(&(comp.v23.transpose() * &bh)).unwrap();
    let q = t.dim();
    let mut sa = 0.0;
    let mut n_hat = 0.0;
    for (x, yi) in a.rows() {
        let pa = participation_prob(x, yi, &t);
        let mut h = DVector::zeros(q);
        h[0] = 1.0;
        for (k, v) in x.shared().enumerate() {
            h[k + 1] = v;
        }
        h[q - 1] = cumulant(x, t.gamma, &xi).d_gamma;
        let bracket = bh.dot(&h) + cs.dot(&outcome_score(x, yi, &xi));
        sa += (1.0 - pa) * bracket * bracket;
        n_hat += 1.0 / pa;
    }
    let direct = sa / n_hat;
    assert!((var.sa_term - direct).abs() <= 1e-12 * direct.abs().max(1e-300), "{} vs {direct}", var.sa_term);
    assert!((var.sigma2 - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
}
