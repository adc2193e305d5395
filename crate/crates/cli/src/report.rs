//! The analysis report and its JSON, CSV and plain-text renderings.
//!
//! JSON and CSV carry shortest round-trip decimals; the text table rounds
//! to six significant digits.

use std::fmt::Write as _;

use npsurvey::{EstimatorKind, Family};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Table,
}

impl Format {
    /// Guess from a file extension; anything unrecognized is JSON.
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            Some("txt") => Format::Table,
            _ => Format::Json,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "table" | "text" | "txt" => Ok(Format::Table),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// Plug-in `σ̂²` after flooring at 0.
    pub sigma2: Option<f64>,
    pub floored: bool,
}

/// One fitted coefficient with its observed-information standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identifiability {
    /// Absent when the information matrix is exactly singular.
    pub condition_number: Option<f64>,
    pub gamma_profile_curvature: f64,
    pub flag: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub npsurvey_version: String,
    pub cli_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub family: Family,
    pub level: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// Population size used to scale variances into standard errors.
    pub population: f64,
    pub estimates: Vec<EstimateRow>,
    /// α, one β per shared covariate, then γ.
    pub theta: Vec<ParamRow>,
    /// Intercept, one coefficient per covariate, then σ² if Gaussian.
    pub xi: Vec<ParamRow>,
    pub identifiability: Identifiability,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl Report {
    /// Every number in the report, labelled; used to refuse non-finite output.
    fn numbers(&self) -> Vec<(String, f64)> {
        let mut out = vec![
            ("level".to_string(), self.level),
            ("population".to_string(), self.population),
            (
                "identifiability.gamma_profile_curvature".to_string(),
                self.identifiability.gamma_profile_curvature,
            ),
        ];
        if let Some(c) = self.identifiability.condition_number {
            out.push(("identifiability.condition_number".into(), c));
        }
        for r in &self.estimates {
            let name = r.estimator.name();
            out.push((format!("{name}.estimate"), r.estimate));
            for (field, v) in [("se", r.se), ("ci_low", r.ci_low), ("ci_high", r.ci_high), ("sigma2", r.sigma2)] {
                if let Some(v) = v {
                    out.push((format!("{name}.{field}"), v));
                }
            }
        }
        for (block, rows) in [("theta", &self.theta), ("xi", &self.xi)] {
            for r in rows {
                out.push((format!("{block}.{}", r.name), r.estimate));
                if let Some(se) = r.se {
                    out.push((format!("{block}.{}.se", r.name), se));
                }
            }
        }
        out
    }

    pub fn check_finite(&self) -> CliResult<()> {
        match self.numbers().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(CliError::Internal(format!("report field {name} is {v}"))),
            None => Ok(()),
        }
    }

    pub fn estimate(&self, kind: EstimatorKind) -> Option<&EstimateRow> {
        self.estimates.iter().find(|r| r.estimator == kind)
    }
}

/// `v` rounded to six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    let exp = rounded.abs().log10().floor() as i32;
    if (-5..7).contains(&exp) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

fn opt(v: Option<f64>, f: fn(f64) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn full(v: f64) -> String {
    v.to_string()
}

/// Renders `report`; non-finite numbers are refused.
pub fn emit_report(report: &Report, format: Format) -> CliResult<Vec<u8>> {
    report.check_finite()?;
    match format {
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(report).map_err(|e| CliError::Internal(e.to_string()))?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Csv => emit_csv(report),
        Format::Table => Ok(emit_table(report).into_bytes()),
    }
}

pub fn parse_json_report(bytes: &[u8]) -> CliResult<Report> {
    serde_json::from_slice(bytes).map_err(|e| CliError::Internal(format!("malformed report: {e}")))
}

pub const CSV_HEADER: [&str; 8] = ["section", "name", "estimate", "se", "ci_low", "ci_high", "sigma2", "note"];

fn emit_csv(report: &Report) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut rows: Vec<[String; 8]> = Vec::new();
    let blank = String::new;
    let meta = |name: &str, v: String| {
        [
            "meta".into(),
            name.into(),
            v,
            blank(),
            blank(),
            blank(),
            blank(),
            blank(),
        ]
    };
    rows.push(meta("n_a", report.n_a.to_string()));
    rows.push(meta("n_b", report.n_b.to_string()));
    rows.push(meta("population", full(report.population)));
    rows.push(meta("level", full(report.level)));
    for r in &report.estimates {
        rows.push([
            "estimate".into(),
            r.estimator.name().into(),
            full(r.estimate),
            opt(r.se, full),
            opt(r.ci_low, full),
            opt(r.ci_high, full),
            opt(r.sigma2, full),
            if r.floored { "floored".into() } else { blank() },
        ]);
    }
    for (section, params) in [("theta", &report.theta), ("xi", &report.xi)] {
        for p in params {
            rows.push([
                section.into(),
                p.name.clone(),
                full(p.estimate),
                opt(p.se, full),
                blank(),
                blank(),
                blank(),
                blank(),
            ]);
        }
    }
    let id = &report.identifiability;
    rows.push(meta("condition_number", opt(id.condition_number, full)));
    rows.push(meta("gamma_profile_curvature", full(id.gamma_profile_curvature)));
    let mut flag = meta("identifiability_flag", blank());
    flag[7] = id.flag.to_string();
    rows.push(flag);
    for warning in &report.warnings {
        let mut row = meta("", blank());
        row[0] = "warning".into();
        row[7] = warning.clone();
        rows.push(row);
    }
    let prov = &report.provenance;
    for (name, value) in [
        ("family", report.family.to_string()),
        ("config_hash", prov.config_hash.clone()),
        ("seed", prov.seed.to_string()),
        ("npsurvey_version", prov.npsurvey_version.clone()),
        ("cli_version", prov.cli_version.clone()),
    ] {
        let mut row = meta(name, blank());
        row[0] = "provenance".into();
        row[7] = value;
        rows.push(row);
    }

    let internal = |e: csv::Error| CliError::Internal(e.to_string());
    w.write_record(CSV_HEADER).map_err(internal)?;
    for row in rows {
        w.write_record(&row).map_err(internal)?;
    }
    w.into_inner().map_err(|e| CliError::Internal(e.to_string()))
}

fn aligned(out: &mut String, rows: &[Vec<String>]) {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    for row in rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            let pad = widths[j] - cell.chars().count();
            if j == 0 {
                line.push_str(cell);
                line.extend(std::iter::repeat_n(' ', pad));
            } else {
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
}

fn emit_table(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "family {}  level {}  n_A {}  n_B {}  N {}",
        report.family,
        sig6(report.level),
        report.n_a,
        report.n_b,
        sig6(report.population)
    );
    out.push_str("\nEstimates\n");
    let mut rows = vec![["estimator", "estimate", "se", "ci_low", "ci_high", "sigma2"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()];
    for r in &report.estimates {
        rows.push(vec![
            format!("{}{}", r.estimator.name(), if r.floored { "*" } else { "" }),
            sig6(r.estimate),
            opt(r.se, sig6),
            opt(r.ci_low, sig6),
            opt(r.ci_high, sig6),
            opt(r.sigma2, sig6),
        ]);
    }
    aligned(&mut out, &rows);
    for (title, params) in [("Participation model", &report.theta), ("Outcome model", &report.xi)] {
        let _ = write!(out, "\n{title}\n");
        let mut rows = vec![vec!["parameter".to_string(), "estimate".into(), "se".into()]];
        for p in params {
            rows.push(vec![p.name.clone(), sig6(p.estimate), opt(p.se, sig6)]);
        }
        aligned(&mut out, &rows);
    }
    let id = &report.identifiability;
    out.push_str("\nIdentifiability\n");
    aligned(
        &mut out,
        &[
            vec!["condition_number".into(), opt(id.condition_number, sig6)],
            vec!["gamma_profile_curvature".into(), sig6(id.gamma_profile_curvature)],
            vec!["flag".into(), id.flag.to_string()],
        ],
    );
    if !report.warnings.is_empty() {
        out.push_str("\nWarnings\n");
        for w in &report.warnings {
            let _ = writeln!(out, "- {w}");
        }
    }
    let prov = &report.provenance;
    out.push_str("\nProvenance\n");
    aligned(
        &mut out,
        &[
            vec!["config_hash".into(), prov.config_hash.clone()],
            vec!["seed".into(), prov.seed.to_string()],
            vec!["npsurvey".into(), prov.npsurvey_version.clone()],
            vec!["npsurvey-cli".into(), prov.cli_version.clone()],
        ],
    );
    out
}

/// Data rows of the `Estimates` block of a text rendering.
pub fn table_estimate_rows(text: &str) -> Vec<&str> {
    text.lines()
        .skip_while(|l| *l != "Estimates")
        .skip(2)
        .take_while(|l| !l.is_empty())
        .collect()
}
