use nalgebra::{DMatrix, DVector};

use super::{condition_number, FitResult, FitWarning, Multiplicity};
use crate::data::SampleA;
use crate::error::{Error, Result};
use crate::model::{outcome_hessian, outcome_loglik, outcome_score, Family, Xi};

/// Coefficients beyond this magnitude mean the logistic MLE is running off
/// to infinity.
const SEPARATION_BOUND: f64 = 30.0;
const MAX_NEWTON: usize = 100;

fn loglik(sample: &SampleA, xi: &Xi) -> f64 {
    sample.rows().map(|(x, y)| outcome_loglik(x, y, xi)).sum()
}

fn score_and_hessian(sample: &SampleA, xi: &Xi) -> (DVector<f64>, DMatrix<f64>) {
    let r = xi.dim();
    let mut g = DVector::zeros(r);
    let mut h = DMatrix::zeros(r, r);
    for (x, y) in sample.rows() {
        g += outcome_score(x, y, xi);
        h += outcome_hessian(x, y, xi);
    }
    (g, h)
}

/// Maximum-likelihood fit of the participant outcome model on `S_A`.
///
/// Logistic fits use Newton iterations with step halving and report
/// [`Error::Separation`] when the coefficients diverge. Gaussian fits are
/// solved in closed form; σ² uses the MLE divisor `n`.
pub fn fit_outcome_mle(sample: &SampleA, family: Family) -> Result<FitResult<Xi>> {
    let p = sample.schema().p();
    if sample.n() <= p + 1 {
        return Err(Error::InvalidInput(format!(
            "outcome fit needs n_A > p + 1 (n_A = {}, p = {p})",
            sample.n()
        )));
    }
    sample.validate_for(family)?;
    match family {
        Family::BernoulliLogistic => fit_logistic(sample),
        Family::GaussianLinear => fit_gaussian(sample),
    }
}

fn finish(sample: &SampleA, xi: Xi, iterations: usize) -> FitResult<Xi> {
    let (g, h) = score_and_hessian(sample, &xi);
    let info = -h;
    let mut warnings = Vec::new();
    let cond = condition_number(&info);
    if cond > 1e10 {
        warnings.push(FitWarning::IllConditioned { condition_number: cond });
    }
    FitResult {
        objective_value: loglik(sample, &xi),
        gradient_norm: g.amax(),
        iterations,
        converged: true,
        multiplicity: Multiplicity::Unique,
        info_matrix: info,
        warnings,
        roots: Vec::new(),
        params: xi,
    }
}

fn fit_logistic(sample: &SampleA) -> Result<FitResult<Xi>> {
    let n = sample.n() as f64;
    let ones: f64 = sample.y().iter().sum();
    if ones == 0.0 || ones == n {
        return Err(Error::Separation {
            max_abs_coef: f64::INFINITY,
        });
    }
    let mut coef = vec![0.0; sample.schema().p() + 1];
    coef[0] = (ones / (n - ones)).ln();
    let mut xi = Xi::bernoulli(coef);
    let mut ll = loglik(sample, &xi);
    let tol = 1e-10 * n.max(1.0);
    for it in 0..MAX_NEWTON {
        let (g, h) = score_and_hessian(sample, &xi);
        if g.amax() <= tol {
            return Ok(finish(sample, xi, it));
        }
        let max_abs = xi.coef().iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if max_abs > SEPARATION_BOUND {
            return Err(Error::Separation { max_abs_coef: max_abs });
        }
        let Some(chol) = (-h).cholesky() else {
            return Err(Error::Singular("logistic outcome information".into()));
        };
        let step = chol.solve(&g);
        let current = xi.to_vector();
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let cand = Xi::bernoulli((&current + &step * t).iter().copied().collect());
            let cand_ll = loglik(sample, &cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs() {
                xi = cand;
                ll = cand_ll;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved || step.amax() * t < 1e-13 {
            let (g, _) = score_and_hessian(sample, &xi);
            if g.amax() <= 1e-6 * n {
                return Ok(finish(sample, xi, it + 1));
            }
            break;
        }
    }
    let max_abs = xi.coef().iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_abs > SEPARATION_BOUND / 2.0 {
        return Err(Error::Separation { max_abs_coef: max_abs });
    }
    Err(Error::Singular("logistic outcome fit did not converge".into()))
}

fn fit_gaussian(sample: &SampleA) -> Result<FitResult<Xi>> {
    let k = sample.schema().p() + 1;
    let mut xtx = DMatrix::zeros(k, k);
    let mut xty = DVector::zeros(k);
    let mut row = DVector::zeros(k);
    for (x, y) in sample.rows() {
        row[0] = 1.0;
        row.as_mut_slice()[1..].copy_from_slice(x.values());
        xtx += &row * row.transpose();
        xty += &row * y;
    }
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Singular("gaussian outcome design matrix".into()))?;
    let beta = chol.solve(&xty);
    let probe = Xi::gaussian(beta.iter().copied().collect(), 1.0)?;
    let rss: f64 = sample
        .rows()
        .map(|(x, y)| (y - probe.linear_predictor(x)).powi(2))
        .sum();
    let sigma2 = rss / sample.n() as f64;
    if sigma2 <= 0.0 {
        return Err(Error::Singular("gaussian outcome fits the sample exactly (σ² = 0)".into()));
    }
    let xi = Xi::gaussian(beta.iter().copied().collect(), sigma2)?;
    Ok(finish(sample, xi, 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Role, Schema};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn intercept_only(y: Vec<f64>) -> SampleA {
        let s = Arc::new(Schema::new(vec!["z".into()], vec![Role::Instrument]).unwrap());
        let x = vec![0.0; y.len()];
        SampleA::new(s, x, y).unwrap()
    }

    #[test]
    fn logistic_intercept_is_logit_of_mean() {
        // both covariate groups have 6 ones out of 10, so the slope is 0
        // and the intercept is exactly logit(0.6)
        let s = Arc::new(Schema::all_shared(["x"]).unwrap());
        let x: Vec<f64> = (0..20).map(|i| f64::from(i >= 10)).collect();
        let y: Vec<f64> = (0..20).map(|i| f64::from(i % 10 < 6)).collect();
        let a = SampleA::new(s, x, y).unwrap();
        let fit = fit_outcome_mle(&a, Family::BernoulliLogistic).unwrap();
        assert!(fit.converged);
        assert_relative_eq!(fit.params.coef()[0], 0.405_465_108_108_164_4, max_relative = 1e-9);
        assert!(fit.params.coef()[1].abs() < 1e-9);
    }

    #[test]
    fn gaussian_closed_form() {
        // group means are both 2, so the fit is intercept-only in effect
        let s = Arc::new(Schema::all_shared(["x"]).unwrap());
        let a = SampleA::new(s, vec![1.0, 0.0, 1.0], vec![1.0, 2.0, 3.0]).unwrap();
        let fit = fit_outcome_mle(&a, Family::GaussianLinear).unwrap();
        assert_relative_eq!(fit.params.coef()[0], 2.0, max_relative = 1e-12);
        assert!(fit.params.coef()[1].abs() < 1e-12);
        assert_relative_eq!(fit.params.sigma2().unwrap(), 2.0 / 3.0, max_relative = 1e-12);
        assert!(fit.gradient_norm < 1e-9);
    }

    #[test]
    fn identical_binary_responses_separate() {
        let a = intercept_only(vec![1.0; 8]);
        assert!(matches!(
            fit_outcome_mle(&a, Family::BernoulliLogistic),
            Err(Error::Separation { .. })
        ));
    }

    #[test]
    fn separated_covariate_detected() {
        let s = Arc::new(Schema::all_shared(["x"]).unwrap());
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let a = SampleA::new(s, x, y).unwrap();
        assert!(matches!(
            fit_outcome_mle(&a, Family::BernoulliLogistic),
            Err(Error::Separation { .. })
        ));
    }

    #[test]
    fn too_few_rows() {
        let s = Arc::new(Schema::all_shared(["x"]).unwrap());
        let a = SampleA::new(s, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert!(fit_outcome_mle(&a, Family::BernoulliLogistic).is_err());
    }
}
