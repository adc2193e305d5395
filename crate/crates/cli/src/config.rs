//! TOML configuration for `analyze` and `simulate`.

use std::path::Path;

use npsurvey::fitting::{CalibrationOptions, ElOptions};
use npsurvey::simulation::{PopulationSpec, StudyConfig};
use npsurvey::{EstimatorKind, Family, FitOptions};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

fn default_level() -> f64 {
    0.95
}

fn default_seed() -> u64 {
    1
}

fn default_family() -> Family {
    Family::BernoulliLogistic
}

/// Numerical tolerances; omitted keys take the library defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub cond_warn: f64,
    pub calibration_starts: usize,
    pub calibration_root_tol: f64,
    pub el_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        let fit = FitOptions::default();
        let cal = CalibrationOptions::default();
        Self {
            max_iter: fit.max_iter,
            grad_tol: fit.grad_tol,
            cond_warn: fit.cond_warn,
            calibration_starts: cal.n_starts,
            calibration_root_tol: cal.root_tol,
            el_tol: ElOptions::default().tol,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> CliResult<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("cond_warn", self.cond_warn),
            ("calibration_root_tol", self.calibration_root_tol),
            ("el_tol", self.el_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("tolerances.{name} must be positive and finite")));
            }
        }
        if self.max_iter == 0 || self.calibration_starts == 0 {
            return Err(CliError::Config(
                "tolerances.max_iter and tolerances.calibration_starts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn fit_options(&self, allow_no_instrument: bool) -> FitOptions {
        FitOptions {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            cond_warn: self.cond_warn,
            allow_no_instrument,
        }
    }

    pub fn calibration_options(&self, seed: u64) -> CalibrationOptions {
        CalibrationOptions {
            n_starts: self.calibration_starts,
            root_tol: self.calibration_root_tol,
            seed,
            ..CalibrationOptions::default()
        }
    }

    pub fn el_options(&self) -> ElOptions {
        ElOptions {
            tol: self.el_tol,
            ..ElOptions::default()
        }
    }
}

/// Sampling design of the reference sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DesignConfig {
    /// `n` defaults to the number of rows in the reference file.
    Srswor {
        #[serde(rename = "N")]
        population: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
    },
    /// First-order probabilities `1/d` only.
    Hajek {
        #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
        population: Option<usize>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default = "default_family")]
    pub family: Family,
    /// Covariates entering both models, in coefficient order.
    pub shared: Vec<String>,
    /// Covariates entering the outcome model only.
    #[serde(default)]
    pub instruments: Vec<String>,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_level")]
    pub level: f64,
    pub design: DesignConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Acknowledges that θ may not be identifiable without an instrument.
    #[serde(default)]
    pub allow_no_instrument: bool,
}

/// Estimator names are checked here rather than by serde so that an
/// unknown name is reported as a usage error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysisConfig {
    #[serde(default = "default_family")]
    family: Family,
    shared: Vec<String>,
    #[serde(default)]
    instruments: Vec<String>,
    estimators: Vec<String>,
    #[serde(default = "default_level")]
    level: f64,
    design: DesignConfig,
    #[serde(default)]
    tolerances: Tolerances,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default)]
    allow_no_instrument: bool,
}

pub fn parse_estimators<S: AsRef<str>>(names: &[S]) -> CliResult<Vec<EstimatorKind>> {
    let mut out = Vec::new();
    for name in names {
        let kind: EstimatorKind = name
            .as_ref()
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("unknown estimator `{}`", name.as_ref())))?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    Ok(out)
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

impl AnalysisConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let raw: RawAnalysisConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let config = Self {
            family: raw.family,
            shared: raw.shared,
            instruments: raw.instruments,
            estimators: parse_estimators(&raw.estimators)?,
            level: raw.level,
            design: raw.design,
            tolerances: raw.tolerances,
            seed: raw.seed,
            allow_no_instrument: raw.allow_no_instrument,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_toml_str(&read_text(path)?)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.estimators.is_empty() {
            return Err(CliError::Config("at least one estimator is required".into()));
        }
        if self.shared.is_empty() {
            return Err(CliError::Config("at least one shared covariate is required".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for name in self.covariates() {
            if name.is_empty() || name == "y" || name == "d" {
                return Err(CliError::Config(format!("`{name}` cannot be a covariate name")));
            }
            if !seen.insert(name) {
                return Err(CliError::Config(format!("column `{name}` is assigned more than one role")));
            }
        }
        if self.instruments.is_empty() && !self.allow_no_instrument {
            return Err(CliError::Config(
                "no instrument column: θ may not be identifiable; set allow_no_instrument = true to proceed".into(),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level {} outside (0, 1)", self.level)));
        }
        match &self.design {
            DesignConfig::Srswor { population, n } => {
                if *population == 0 || n.is_some_and(|n| n == 0 || n > *population) {
                    return Err(CliError::Config("srswor design needs 1 <= n <= N".into()));
                }
            }
            DesignConfig::Hajek { population } => {
                if *population == Some(0) {
                    return Err(CliError::Config("design N must be positive".into()));
                }
            }
        }
        self.tolerances.validate()
    }

    /// Shared columns followed by instruments: the model's column order.
    pub fn covariates(&self) -> impl Iterator<Item = &str> {
        self.shared.iter().chain(&self.instruments).map(String::as_str)
    }

    /// SHA-256 of the canonical serialization. Formatting, comments and
    /// keys left at their default do not change it.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}

fn canonical_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("configuration serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// One simulation cell. `alpha` is looked up from `(expected_n_a, gamma)`
/// for the four standard settings and must be given otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub expected_n_a: usize,
    pub n_b: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl CellConfig {
    /// File-name stem such as `ena500_nb1000_gamma0.8`.
    pub fn label(&self) -> String {
        format!("ena{}_nb{}_gamma{}", self.expected_n_a, self.n_b, self.gamma)
    }
}

fn default_reps() -> usize {
    500
}

fn default_population_size() -> usize {
    PopulationSpec::default().n
}

fn default_population_seed() -> u64 {
    PopulationSpec::default().seed
}

fn all_estimators() -> Vec<String> {
    EstimatorKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulateConfig {
    #[serde(default = "default_reps")]
    reps: usize,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_level")]
    level: f64,
    #[serde(default = "all_estimators")]
    estimators: Vec<String>,
    #[serde(default)]
    calibration: bool,
    #[serde(default = "default_population_size")]
    population_size: usize,
    #[serde(default = "default_population_seed")]
    population_seed: u64,
    #[serde(default)]
    tolerances: Tolerances,
    cells: Vec<CellConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub reps: usize,
    /// Master seed of the sampling substreams.
    pub seed: u64,
    pub level: f64,
    pub estimators: Vec<EstimatorKind>,
    /// Fit θ by calibration too, reporting its metrics and multiplicity.
    pub calibration: bool,
    pub population_size: usize,
    pub population_seed: u64,
    pub tolerances: Tolerances,
    pub cells: Vec<CellConfig>,
}

impl SimulateConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let raw: RawSimulateConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let config = Self {
            reps: raw.reps,
            seed: raw.seed,
            level: raw.level,
            estimators: parse_estimators(&raw.estimators)?,
            calibration: raw.calibration,
            population_size: raw.population_size,
            population_seed: raw.population_seed,
            tolerances: raw.tolerances,
            cells: raw.cells,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        Self::from_toml_str(&read_text(path)?)
    }

    fn validate(&self) -> CliResult<()> {
        if self.cells.is_empty() {
            return Err(CliError::Config("no [[cells]] configured".into()));
        }
        if self.estimators.is_empty() {
            return Err(CliError::Config("at least one estimator is required".into()));
        }
        for cell in &self.cells {
            self.study(cell, 1).map_err(|e| CliError::Config(format!("cell {}: {e}", cell.label())))?;
        }
        let mut labels: Vec<String> = self.cells.iter().map(CellConfig::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.cells.len() {
            return Err(CliError::Config("duplicate cells".into()));
        }
        self.tolerances.validate()
    }

    /// The study configuration of one cell.
    pub fn study(&self, cell: &CellConfig, threads: usize) -> CliResult<StudyConfig> {
        let alpha = match cell.alpha {
            Some(a) => a,
            None => PopulationSpec::table1(cell.expected_n_a, cell.gamma)
                .map(|s| s.alpha)
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "no standard α for E(n_A) = {}, γ = {}; give `alpha` explicitly",
                        cell.expected_n_a, cell.gamma
                    ))
                })?,
        };
        let study = StudyConfig {
            spec: PopulationSpec {
                n: self.population_size,
                alpha,
                gamma: cell.gamma,
                seed: self.population_seed,
                ..PopulationSpec::default()
            },
            reps: self.reps,
            n_b: cell.n_b,
            estimators: self.estimators.clone(),
            level: self.level,
            threads,
            seed: self.seed,
            calibration: self.calibration,
            fit: self.tolerances.fit_options(false),
            calibration_options: self.tolerances.calibration_options(CalibrationOptions::default().seed),
            el: self.tolerances.el_options(),
        };
        study.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(study)
    }

    pub fn hash(&self) -> String {
        canonical_hash(self)
    }
}
