use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, MetricRow};
use super::population::{generate_population, Population, PopulationSpec};
use super::sampling::{draw_poisson_sample, draw_srswor};
use super::{substream, StreamRole};
use crate::error::{Error, Result};
use crate::estimators::{ignorable_baselines_with, mu_aipw, mu_el, mu_ipw, mu_naive, mu_reg, EstimatorKind, MeanEstimate};
use crate::fitting::{
    el_weights, fit_outcome_mle, fit_theta_calibration, fit_theta_ignorable, fit_theta_pml, CalibrationOptions,
    ElOptions, FitOptions, FitWarning, Multiplicity,
};
use crate::model::{Family, Theta};
use crate::par::map_indexed;
use crate::variance::{plugin_interval, IntervalEstimate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub spec: PopulationSpec,
    pub reps: usize,
    pub n_b: usize,
    pub estimators: Vec<EstimatorKind>,
    pub level: f64,
    /// Worker threads over replications; 0 = all cores, 1 = sequential.
    pub threads: usize,
    /// Master seed of the sampling substreams.
    pub seed: u64,
    /// Also fit θ by calibration (implied when EL is requested).
    pub calibration: bool,
    pub fit: FitOptions,
    pub calibration_options: CalibrationOptions,
    pub el: ElOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            spec: PopulationSpec::default(),
            reps: 500,
            n_b: 1000,
            estimators: EstimatorKind::ALL.to_vec(),
            level: 0.95,
            threads: 0,
            seed: 1,
            calibration: false,
            fit: FitOptions::default(),
            calibration_options: CalibrationOptions::default(),
            el: ElOptions::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if self.n_b == 0 || self.n_b > self.spec.n {
            return Err(Error::InvalidInput(format!(
                "n_B = {} must lie in 1..={}",
                self.n_b, self.spec.n
            )));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidInput("no estimators requested".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level {} outside (0, 1)", self.level)));
        }
        Ok(())
    }

    fn wants(&self, kind: EstimatorKind) -> bool {
        self.estimators.contains(&kind)
    }

    fn runs_calibration(&self) -> bool {
        self.calibration || self.wants(EstimatorKind::El)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub value: f64,
    pub interval: Option<IntervalEstimate>,
    pub floored: bool,
}

/// Everything one replication produced. Missing entries were excluded;
/// `failures` names the reason per estimator or fitting stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub n_a: usize,
    pub empty_redraws: usize,
    pub estimates: BTreeMap<EstimatorKind, EstimateRecord>,
    pub theta_pl: Option<Theta>,
    pub theta_cal: Option<Theta>,
    pub cal_multiplicity: Option<Multiplicity>,
    pub failures: BTreeMap<String, String>,
    /// Non-fatal fit diagnostics as `stage:kind`, e.g. `pl:ill-conditioned`.
    pub warnings: Vec<String>,
}

fn warning_tag(w: &FitWarning) -> &'static str {
    match w {
        FitWarning::IllConditioned { .. } => "ill-conditioned",
        FitWarning::NotConverged { .. } => "not-converged",
    }
}

fn error_tag(e: &Error) -> &'static str {
    match e {
        Error::Dimension { .. } => "dimension",
        Error::InvalidInput(_) => "invalid-input",
        Error::Separation { .. } => "separation",
        Error::Singular(_) => "singular",
        Error::Convergence { .. } => "convergence",
        Error::NoRoot { .. } => "no-root",
        Error::HullViolation(_) => "hull-violation",
        Error::Design(_) => "design",
        Error::ZeroReference => "zero-reference",
    }
}

/// Runs replication `rep` against a fixed population.
pub fn run_replication(pop: &Population, config: &StudyConfig, rep: usize) -> Result<RepRecord> {
    let mut rng_a = substream(config.seed, rep as u64, StreamRole::SampleA);
    let mut rng_b = substream(config.seed, rep as u64, StreamRole::SampleB);
    let (a, empty_redraws) = draw_poisson_sample(pop, &pop.theta_true, &mut rng_a)?;
    let b = draw_srswor(pop, config.n_b, &mut rng_b)?;

    let mut record = RepRecord {
        rep,
        n_a: a.n(),
        empty_redraws,
        estimates: BTreeMap::new(),
        theta_pl: None,
        theta_cal: None,
        cal_multiplicity: None,
        failures: BTreeMap::new(),
        warnings: Vec::new(),
    };
    let fail = |record: &mut RepRecord, stage: &str, e: &Error| {
        record.failures.insert(stage.to_string(), error_tag(e).to_string());
    };
    let point = |record: &mut RepRecord, est: MeanEstimate| {
        record.estimates.insert(
            est.kind,
            EstimateRecord {
                value: est.value,
                interval: None,
                floored: false,
            },
        );
    };

    if config.wants(EstimatorKind::Naive) {
        point(&mut record, mu_naive(&a)?);
    }

    let xi = match fit_outcome_mle(&a, Family::BernoulliLogistic) {
        Ok(fit) => fit.params,
        Err(e) => {
            fail(&mut record, "outcome", &e);
            return Ok(record);
        }
    };
    let theta_ign = match fit_theta_ignorable(&a, &b, &config.fit) {
        Ok(fit) => Some(fit.params),
        Err(e) => {
            fail(&mut record, "ignorable", &e);
            None
        }
    };

    let baselines = [EstimatorKind::Reg2, EstimatorKind::Ipw2, EstimatorKind::Dr2];
    if let Some(t) = &theta_ign {
        if baselines.iter().any(|k| config.wants(*k)) {
            match ignorable_baselines_with(&a, &b, &xi, t) {
                Ok(bl) => {
                    for est in [bl.reg2, bl.ipw2, bl.dr2] {
                        if config.wants(est.kind) {
                            point(&mut record, est);
                        }
                    }
                }
                Err(e) => fail(&mut record, "baselines", &e),
            }
        }
    }

    let theta = match fit_theta_pml(&xi, &a, &b, theta_ign.as_ref(), &config.fit) {
        Ok(fit) => {
            record.warnings.extend(fit.warnings.iter().map(|w| format!("pl:{}", warning_tag(w))));
            fit.params
        }
        Err(e) => {
            fail(&mut record, "pl", &e);
            return Ok(record);
        }
    };
    record.theta_pl = Some(theta.clone());

    for kind in EstimatorKind::PROPOSED {
        if !config.wants(kind) {
            continue;
        }
        let est = match kind {
            EstimatorKind::Reg => mu_reg(&b, &theta, &xi),
            EstimatorKind::Ipw => mu_ipw(&a, &theta),
            _ => mu_aipw(&a, &b, &theta, &xi),
        };
        let est = match est {
            Ok(e) => e,
            Err(e) => {
                fail(&mut record, kind.name(), &e);
                continue;
            }
        };
        let value = est.value;
        match plugin_interval(&est, &a, &b, &theta, &xi, config.level, 1) {
            Ok((ci, var)) => {
                record.estimates.insert(
                    kind,
                    EstimateRecord {
                        value,
                        interval: Some(ci),
                        floored: var.floored,
                    },
                );
            }
            Err(e) => {
                fail(&mut record, &format!("{}-variance", kind.name()), &e);
                point(&mut record, est);
            }
        }
    }

    if config.runs_calibration() {
        let mut copts = config.calibration_options.clone();
        copts.seed = substream(config.seed, rep as u64, StreamRole::Calibration).random();
        copts.threads = 1;
        match fit_theta_calibration(&a, &b, Some(&theta), &copts) {
            Ok(fit) => {
                record.warnings.extend(fit.warnings.iter().map(|w| format!("calibration:{}", warning_tag(w))));
                record.cal_multiplicity = Some(fit.multiplicity);
                record.theta_cal = Some(fit.params.clone());
                if config.wants(EstimatorKind::El) {
                    match el_weights(&fit.params, &xi, &a, &b, &config.el).and_then(|w| mu_el(&w, &a)) {
                        Ok(est) => point(&mut record, est),
                        Err(e) => fail(&mut record, "el", &e),
                    }
                }
            }
            Err(e) => fail(&mut record, "calibration", &e),
        }
    }
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub kind: EstimatorKind,
    pub used: usize,
    pub excluded: usize,
    pub floored: usize,
    pub metrics: Option<MetricRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMetrics {
    pub name: String,
    pub true_value: f64,
    pub metrics: Option<MetricRow>,
}

/// θ recovery for one fitting method. For calibration only replications
/// with a single detected root enter the metrics; `nmr` counts them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMetrics {
    pub method: String,
    pub nmr: usize,
    pub params: Vec<ParamMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub alpha: f64,
    pub gamma: f64,
    pub population_size: usize,
    pub n_b: usize,
    pub reps: usize,
    pub seed: u64,
    pub mu0: f64,
    pub mean_n_a: f64,
    pub empty_redraws: usize,
    pub estimators: Vec<EstimatorMetrics>,
    pub theta: Vec<ThetaMetrics>,
    /// Failure counts keyed by `stage:reason`.
    pub failures: BTreeMap<String, usize>,
    /// Replications carrying each fit warning, keyed by `stage:kind`.
    pub warnings: BTreeMap<String, usize>,
}

impl MetricsTable {
    pub fn estimator(&self, kind: EstimatorKind) -> Option<&EstimatorMetrics> {
        self.estimators.iter().find(|e| e.kind == kind)
    }

    pub fn theta_method(&self, method: &str) -> Option<&ThetaMetrics> {
        self.theta.iter().find(|t| t.method == method)
    }
}

fn theta_metrics(method: &str, thetas: &[&Theta], truth: &Theta, names: &[String]) -> Result<ThetaMetrics> {
    let truth_v = truth.to_vector();
    let params = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let values: Vec<f64> = thetas.iter().map(|t| t.to_vector()[j]).collect();
            let metrics = if values.is_empty() {
                None
            } else {
                Some(compute_metrics(&values, &[], &[], truth_v[j])?)
            };
            Ok(ParamMetrics {
                name: name.clone(),
                true_value: truth_v[j],
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ThetaMetrics {
        method: method.to_string(),
        nmr: thetas.len(),
        params,
    })
}

/// Aggregates replication records in replication order.
pub fn summarize(pop: &Population, config: &StudyConfig, records: &[RepRecord]) -> Result<MetricsTable> {
    let mut estimators = Vec::new();
    for &kind in EstimatorKind::ALL.iter().filter(|k| config.wants(**k)) {
        let recs: Vec<&EstimateRecord> = records.iter().filter_map(|r| r.estimates.get(&kind)).collect();
        let values: Vec<f64> = recs.iter().map(|r| r.value).collect();
        let cis: Vec<IntervalEstimate> = recs.iter().filter_map(|r| r.interval.clone()).collect();
        let ses: Vec<f64> = cis.iter().map(|c| c.se).collect();
        let metrics = if values.is_empty() {
            None
        } else {
            Some(compute_metrics(&values, &ses, &cis, pop.mu0)?)
        };
        estimators.push(EstimatorMetrics {
            kind,
            used: values.len(),
            excluded: records.len() - values.len(),
            floored: recs.iter().filter(|r| r.floored).count(),
            metrics,
        });
    }

    let mut names = vec!["alpha".to_string()];
    names.extend(pop.schema.shared_names().iter().map(|n| format!("beta_{n}")));
    names.push("gamma".into());
    let mut theta = Vec::new();
    let pl: Vec<&Theta> = records.iter().filter_map(|r| r.theta_pl.as_ref()).collect();
    theta.push(theta_metrics("pl", &pl, &pop.theta_true, &names)?);
    if config.runs_calibration() {
        let cal: Vec<&Theta> = records
            .iter()
            .filter(|r| r.cal_multiplicity == Some(Multiplicity::Unique))
            .filter_map(|r| r.theta_cal.as_ref())
            .collect();
        theta.push(theta_metrics("cal", &cal, &pop.theta_true, &names)?);
    }

    let mut failures = BTreeMap::new();
    for r in records {
        for (stage, reason) in &r.failures {
            *failures.entry(format!("{stage}:{reason}")).or_insert(0) += 1;
        }
    }
    let mut warnings = BTreeMap::new();
    for r in records {
        let mut seen: Vec<&String> = r.warnings.iter().collect();
        seen.sort();
        seen.dedup();
        for w in seen {
            *warnings.entry(w.clone()).or_insert(0) += 1;
        }
    }
    Ok(MetricsTable {
        alpha: pop.spec.alpha,
        gamma: pop.spec.gamma,
        population_size: pop.n(),
        n_b: config.n_b,
        reps: records.len(),
        seed: config.seed,
        mu0: pop.mu0,
        mean_n_a: records.iter().map(|r| r.n_a as f64).sum::<f64>() / records.len() as f64,
        empty_redraws: records.iter().map(|r| r.empty_redraws).sum(),
        estimators,
        theta,
        failures,
        warnings,
    })
}

/// Every replication of a study, in replication order.
pub fn run_replications(pop: &Population, config: &StudyConfig) -> Result<Vec<RepRecord>> {
    config.validate()?;
    map_indexed(config.reps, config.threads, |rep| run_replication(pop, config, rep))
        .into_iter()
        .collect()
}

/// Generates the population, runs every replication and aggregates.
pub fn run_study(config: &StudyConfig) -> Result<MetricsTable> {
    config.validate()?;
    let pop = generate_population(&config.spec)?;
    let records = run_replications(&pop, config)?;
    summarize(&pop, config, &records)
}
