//! Covariate schema and the two samples.
//!
//! Covariates are stored row-major. Every column carries a role: `Shared`
//! columns enter both the participation and the outcome model, `Instrument`
//! columns enter the outcome model only. Roles are fixed when the schema is
//! built, so excluding instruments from the participation model is a
//! property of the data rather than a convention callers must remember.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Family;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Shared,
    Instrument,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    names: Vec<String>,
    roles: Vec<Role>,
    shared: Vec<usize>,
}

impl Schema {
    pub fn new(names: Vec<String>, roles: Vec<Role>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidInput("schema needs at least one covariate".into()));
        }
        if names.len() != roles.len() {
            return Err(Error::dim("covariate roles", names.len(), roles.len()));
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::InvalidInput(format!("duplicate covariate column `{name}`")));
            }
        }
        let shared = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == Role::Shared)
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            names,
            roles,
            shared,
        })
    }

    /// Schema where every column is shared.
    pub fn all_shared<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let roles = vec![Role::Shared; names.len()];
        Self::new(names, roles)
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn n_shared(&self) -> usize {
        self.shared.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn shared_indices(&self) -> &[usize] {
        &self.shared
    }

    pub fn shared_names(&self) -> Vec<&str> {
        self.shared.iter().map(|&i| self.names[i].as_str()).collect()
    }

    pub fn has_instrument(&self) -> bool {
        self.roles.contains(&Role::Instrument)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cols: Vec<String> = self
            .names
            .iter()
            .zip(&self.roles)
            .map(|(n, r)| match r {
                Role::Shared => n.clone(),
                Role::Instrument => format!("{n}*"),
            })
            .collect();
        write!(f, "[{}]", cols.join(", "))
    }
}

/// Borrowed view of one covariate row together with its schema.
#[derive(Clone, Copy, Debug)]
pub struct Covariates<'a> {
    values: &'a [f64],
    schema: &'a Schema,
}

impl<'a> Covariates<'a> {
    pub fn new(values: &'a [f64], schema: &'a Schema) -> Result<Self> {
        if values.len() != schema.p() {
            return Err(Error::dim(format!("covariates {schema}"), schema.p(), values.len()));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite value in covariate `{}`",
                schema.names()[j]
            )));
        }
        Ok(Self { values, schema })
    }

    pub(crate) fn new_unchecked(values: &'a [f64], schema: &'a Schema) -> Self {
        debug_assert_eq!(values.len(), schema.p());
        Self { values, schema }
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn schema(&self) -> &'a Schema {
        self.schema
    }

    pub fn shared(&self) -> impl Iterator<Item = f64> + 'a {
        let values = self.values;
        self.schema.shared.iter().map(move |&j| values[j])
    }
}

fn check_matrix(what: &str, x: &[f64], n: usize, schema: &Schema) -> Result<()> {
    if x.len() != n * schema.p() {
        return Err(Error::dim(format!("{what} covariate matrix"), n * schema.p(), x.len()));
    }
    if let Some(k) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "{what}: non-finite covariate at row {}, column `{}`",
            k / schema.p(),
            schema.names()[k % schema.p()]
        )));
    }
    Ok(())
}

/// The non-probability sample: covariates and responses.
#[derive(Clone, Debug)]
pub struct SampleA {
    schema: Arc<Schema>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl SampleA {
    pub fn new(schema: Arc<Schema>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidInput("sample A is empty".into()));
        }
        check_matrix("sample A", &x, y.len(), &schema)?;
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("sample A: non-finite response at row {i}")));
        }
        Ok(Self { schema, x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> Covariates<'_> {
        let p = self.schema.p();
        Covariates::new_unchecked(&self.x[i * p..(i + 1) * p], &self.schema)
    }

    pub fn rows(&self) -> impl Iterator<Item = (Covariates<'_>, f64)> + '_ {
        (0..self.n()).map(move |i| (self.row(i), self.y[i]))
    }

    /// Checks that every response is legal for `family`.
    pub fn validate_for(&self, family: Family) -> Result<()> {
        if family == Family::BernoulliLogistic {
            if let Some(i) = self.y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!(
                    "row {i}: response {} is not binary",
                    self.y[i]
                )));
            }
        }
        Ok(())
    }
}

/// Source of first- and second-order inclusion probabilities for a
/// general without-replacement design.
pub trait PairwiseInclusion: Send + Sync + fmt::Debug {
    fn len(&self) -> usize;
    fn first(&self, i: usize) -> f64;
    fn joint(&self, i: usize, j: usize) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense n × n matrix of joint inclusion probabilities with the first-order
/// probabilities on the diagonal.
#[derive(Clone, Debug)]
pub struct DenseInclusion {
    n: usize,
    pi: Vec<f64>,
}

impl DenseInclusion {
    pub fn new(n: usize, pi: Vec<f64>) -> Result<Self> {
        if pi.len() != n * n {
            return Err(Error::dim("joint inclusion matrix", n * n, pi.len()));
        }
        for i in 0..n {
            for j in 0..n {
                let v = pi[i * n + j];
                if !(v > 0.0 && v <= 1.0) {
                    return Err(Error::Design(format!("π_{i}{j} = {v} outside (0, 1]")));
                }
                if (v - pi[j * n + i]).abs() > 1e-12 {
                    return Err(Error::Design(format!("joint inclusion not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { n, pi })
    }
}

impl PairwiseInclusion for DenseInclusion {
    fn len(&self) -> usize {
        self.n
    }
    fn first(&self, i: usize) -> f64 {
        self.pi[i * self.n + i]
    }
    fn joint(&self, i: usize, j: usize) -> f64 {
        self.pi[i * self.n + j]
    }
}

#[derive(Clone, Debug)]
pub enum DesignInfo {
    /// Simple random sampling without replacement of `n` from `population`.
    Srswor { n: usize, population: usize },
    /// Arbitrary design with known pairwise inclusion probabilities.
    GeneralHt {
        inclusion: Arc<dyn PairwiseInclusion>,
        population: Option<usize>,
    },
    /// Joint probabilities unknown; first-order probabilities are `1/d_i`.
    HajekApprox { population: Option<usize> },
}

impl DesignInfo {
    pub fn srswor(n: usize, population: usize) -> Result<Self> {
        if n == 0 || n > population {
            return Err(Error::Design(format!(
                "SRSWOR requires 1 <= n <= N (n = {n}, N = {population})"
            )));
        }
        Ok(DesignInfo::Srswor { n, population })
    }

    pub fn population_size(&self) -> Option<usize> {
        match self {
            DesignInfo::Srswor { population, .. } => Some(*population),
            DesignInfo::GeneralHt { population, .. } | DesignInfo::HajekApprox { population } => {
                *population
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DesignInfo::Srswor { .. } => "srswor",
            DesignInfo::GeneralHt { .. } => "general-ht",
            DesignInfo::HajekApprox { .. } => "hajek",
        }
    }
}

/// The reference probability sample: covariates and survey weights.
#[derive(Clone, Debug)]
pub struct SampleB {
    schema: Arc<Schema>,
    x: Vec<f64>,
    d: Vec<f64>,
    design: DesignInfo,
}

impl SampleB {
    pub fn new(schema: Arc<Schema>, x: Vec<f64>, d: Vec<f64>, design: DesignInfo) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::InvalidInput("sample B is empty".into()));
        }
        check_matrix("sample B", &x, d.len(), &schema)?;
        if let Some(i) = d.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "sample B row {i}: survey weight {} must be positive",
                d[i]
            )));
        }
        match &design {
            DesignInfo::Srswor { n, .. } if *n != d.len() => {
                return Err(Error::Design(format!(
                    "SRSWOR design declares n = {n} but sample B has {} rows",
                    d.len()
                )));
            }
            DesignInfo::GeneralHt { inclusion, .. } if inclusion.len() != d.len() => {
                return Err(Error::dim("joint inclusion provider", d.len(), inclusion.len()));
            }
            _ => {}
        }
        Ok(Self {
            schema,
            x,
            d,
            design,
        })
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn design(&self) -> &DesignInfo {
        &self.design
    }

    /// N̂_B, the sum of the survey weights.
    pub fn n_hat(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn row(&self, i: usize) -> Covariates<'_> {
        let p = self.schema.p();
        Covariates::new_unchecked(&self.x[i * p..(i + 1) * p], &self.schema)
    }

    pub fn rows(&self) -> impl Iterator<Item = (Covariates<'_>, f64)> + '_ {
        (0..self.n()).map(move |i| (self.row(i), self.d[i]))
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn with_scaled_weights(&self, factor: f64) -> Result<Self> {
        let d = self.d.iter().map(|w| w * factor).collect();
        Self::new(self.schema.clone(), self.x.clone(), d, self.design.clone())
    }
}

/// Checks that the two samples share one covariate schema.
pub fn check_same_schema(a: &SampleA, b: &SampleB) -> Result<()> {
    if a.schema() != b.schema() {
        return Err(Error::InvalidInput(format!(
            "sample schemas differ: A {} vs B {}",
            a.schema(),
            b.schema()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::new(
            vec!["u1".into(), "u2".into(), "z".into()],
            vec![Role::Shared, Role::Shared, Role::Instrument],
        )
        .unwrap()
    }

    #[test]
    fn shared_view_skips_instruments() {
        let s = schema();
        let v = [1.0, 2.0, 3.0];
        let c = Covariates::new(&v, &s).unwrap();
        assert_eq!(c.shared().collect::<Vec<_>>(), vec![1.0, 2.0]);
        assert!(s.has_instrument());
        assert_eq!(s.shared_names(), vec!["u1", "u2"]);
    }

    #[test]
    fn covariate_length_mismatch_names_columns() {
        let s = schema();
        let err = Covariates::new(&[1.0, 2.0], &s).unwrap_err();
        assert!(err.to_string().contains("u1"), "{err}");
    }

    #[test]
    fn duplicate_columns_rejected() {
        assert!(Schema::all_shared(["a", "a"]).is_err());
    }

    #[test]
    fn sample_b_rejects_nonpositive_weight() {
        let s = Arc::new(Schema::all_shared(["x"]).unwrap());
        let err = SampleB::new(s, vec![0.0, 1.0], vec![1.0, 0.0], DesignInfo::HajekApprox { population: None })
            .unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn srswor_bounds() {
        assert!(DesignInfo::srswor(0, 10).is_err());
        assert!(DesignInfo::srswor(11, 10).is_err());
        assert!(DesignInfo::srswor(10, 10).is_ok());
    }

    #[test]
    fn binary_validation() {
        let s = Arc::new(Schema::all_shared(["x"]).unwrap());
        let a = SampleA::new(s, vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(a.validate_for(Family::BernoulliLogistic).is_err());
        assert!(a.validate_for(Family::GaussianLinear).is_ok());
    }
}
