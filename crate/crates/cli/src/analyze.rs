//! The two-sample analysis: outcome fit, participation fit, requested
//! estimators with plug-in variances, and report assembly.

use nalgebra::DMatrix;
use npsurvey::estimators::{ignorable_baselines_with, mu_aipw, mu_el, mu_ipw, mu_naive, mu_reg, Baselines};
use npsurvey::fitting::{
    el_weights, fit_outcome_mle, fit_theta_calibration, fit_theta_ignorable, fit_theta_pml,
    identifiability_diagnostic,
};
use npsurvey::variance::{plugin_interval, variance_population};
use npsurvey::{EstimatorKind, Multiplicity, SampleA, SampleB, Theta, Xi};

use crate::config::AnalysisConfig;
use crate::error::CliResult;
use crate::report::{EstimateRow, Identifiability, ParamRow, Provenance, Report};

/// Square roots of the diagonal of `info⁻¹`; `None` where undefined.
fn standard_errors(info: &DMatrix<f64>) -> Vec<Option<f64>> {
    let n = info.nrows();
    match info.clone().try_inverse() {
        Some(inv) => (0..n)
            .map(|k| {
                let v = inv[(k, k)];
                (v > 0.0 && v.is_finite()).then(|| v.sqrt())
            })
            .collect(),
        None => vec![None; n],
    }
}

fn theta_rows(theta: &Theta, names: &[&str], info: &DMatrix<f64>) -> Vec<ParamRow> {
    let se = standard_errors(info);
    let mut labels = vec!["alpha".to_string()];
    labels.extend(names.iter().map(|n| format!("beta_{n}")));
    labels.push("gamma".into());
    labels
        .into_iter()
        .zip(theta.to_vector().iter())
        .zip(se)
        .map(|((name, &estimate), se)| ParamRow { name, estimate, se })
        .collect()
}

fn xi_rows(xi: &Xi, names: &[String], info: &DMatrix<f64>) -> Vec<ParamRow> {
    let se = if info.nrows() == xi.dim() {
        standard_errors(info)
    } else {
        vec![None; xi.dim()]
    };
    let mut labels = vec!["intercept".to_string()];
    labels.extend(names.iter().cloned());
    if xi.sigma2().is_some() {
        labels.push("sigma2".into());
    }
    labels
        .into_iter()
        .zip(xi.to_vector().iter())
        .zip(se)
        .map(|((name, &estimate), se)| ParamRow { name, estimate, se })
        .collect()
}

fn point_row(kind: EstimatorKind, estimate: f64) -> EstimateRow {
    EstimateRow {
        estimator: kind,
        estimate,
        se: None,
        ci_low: None,
        ci_high: None,
        sigma2: None,
        floored: false,
    }
}

/// Runs the configured analysis. Failures of the outcome or participation
/// fit abort; a failing individual estimator becomes a warning.
pub fn run_analysis(config: &AnalysisConfig, a: &SampleA, b: &SampleB, threads: usize) -> CliResult<Report> {
    let mut warnings = Vec::new();
    if !a.schema().has_instrument() {
        warnings.push("identifiability: no instrument column; proceeding by explicit acknowledgment".to_string());
    }
    let fit_opts = config.tolerances.fit_options(config.allow_no_instrument);

    let outcome = fit_outcome_mle(a, config.family)?;
    warnings.extend(outcome.warnings.iter().map(|w| format!("outcome fit: {w}")));
    let xi = outcome.params.clone();

    let wants = |k: EstimatorKind| config.estimators.contains(&k);
    let needs_baselines = [EstimatorKind::Reg2, EstimatorKind::Ipw2, EstimatorKind::Dr2]
        .into_iter()
        .any(wants);
    let theta_ign = match fit_theta_ignorable(a, b, &fit_opts) {
        Ok(fit) => Some(fit.params),
        Err(e) => {
            warnings.push(format!("ignorable fit: {e}"));
            None
        }
    };
    let baselines: Option<Baselines> = match (&theta_ign, needs_baselines) {
        (Some(t), true) => match ignorable_baselines_with(a, b, &xi, t) {
            Ok(bl) => Some(bl),
            Err(e) => {
                warnings.push(format!("baselines: {e}"));
                None
            }
        },
        _ => None,
    };

    let pl = fit_theta_pml(&xi, a, b, theta_ign.as_ref(), &fit_opts)?;
    warnings.extend(pl.warnings.iter().map(|w| format!("participation fit: {w}")));
    let diag = identifiability_diagnostic(&pl);
    if diag.flag {
        warnings.push(format!(
            "identifiability: weak information about gamma (relative profile curvature {:.3e})",
            diag.gamma_profile_curvature
        ));
    }
    let theta = pl.params.clone();

    let mut estimates = Vec::new();
    for &kind in &config.estimators {
        let est = match kind {
            EstimatorKind::Naive => mu_naive(a),
            EstimatorKind::Reg => mu_reg(b, &theta, &xi),
            EstimatorKind::Ipw => mu_ipw(a, &theta),
            EstimatorKind::Aipw => mu_aipw(a, b, &theta, &xi),
            EstimatorKind::Reg2 | EstimatorKind::Ipw2 | EstimatorKind::Dr2 => match &baselines {
                Some(bl) => Ok([&bl.reg2, &bl.ipw2, &bl.dr2]
                    .into_iter()
                    .find(|e| e.kind == kind)
                    .expect("all baselines present")
                    .clone()),
                None => continue,
            },
            EstimatorKind::El => {
                let copts = config.tolerances.calibration_options(config.seed);
                let cal = match fit_theta_calibration(a, b, Some(&theta), &copts) {
                    Ok(fit) => fit,
                    Err(e) => {
                        warnings.push(format!("el: calibration failed: {e}"));
                        continue;
                    }
                };
                if let Multiplicity::MultipleRoots(k) = cal.multiplicity {
                    warnings.push(format!(
                        "el: calibration equations have {k} roots; using the one nearest the pseudo-likelihood fit"
                    ));
                }
                el_weights(&cal.params, &xi, a, b, &config.tolerances.el_options()).and_then(|w| mu_el(&w, a))
            }
        };
        let est = match est {
            Ok(e) => e,
            Err(e) => {
                warnings.push(format!("{kind}: {e}"));
                continue;
            }
        };
        if !kind.has_plugin_variance() {
            estimates.push(point_row(kind, est.value));
            continue;
        }
        match plugin_interval(&est, a, b, &theta, &xi, config.level, threads) {
            Ok((ci, var)) => {
                warnings.extend(var.warnings.iter().map(|w| format!("{kind} variance: {w}")));
                estimates.push(EstimateRow {
                    estimator: kind,
                    estimate: est.value,
                    se: Some(ci.se),
                    ci_low: Some(ci.ci_low),
                    ci_high: Some(ci.ci_high),
                    sigma2: Some(var.sigma2),
                    floored: var.floored,
                });
            }
            Err(e) => {
                warnings.push(format!("{kind} variance: {e}"));
                estimates.push(point_row(kind, est.value));
            }
        }
    }

    let shared: Vec<&str> = a.schema().shared_names();
    let report = Report {
        family: config.family,
        level: config.level,
        n_a: a.n(),
        n_b: b.n(),
        population: variance_population(b),
        estimates,
        theta: theta_rows(&theta, &shared, &pl.info_matrix),
        xi: xi_rows(&xi, a.schema().names(), &outcome.info_matrix),
        identifiability: Identifiability {
            condition_number: diag.condition_number.is_finite().then_some(diag.condition_number),
            gamma_profile_curvature: diag.gamma_profile_curvature,
            flag: diag.flag,
        },
        warnings,
        provenance: Provenance {
            config_hash: config.hash(),
            seed: config.seed,
            npsurvey_version: npsurvey::VERSION.to_string(),
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
        },
    };
    report.check_finite()?;
    Ok(report)
}
