//! Runs configured simulation cells and writes their metrics.

use std::fmt::Write as _;
use std::path::Path;

use npsurvey::simulation::{run_study, MetricRow, MetricsTable};
use serde::Serialize;

use crate::config::{CellConfig, SimulateConfig};
use crate::error::{CliError, CliResult};
use crate::report::sig6;

#[derive(Serialize)]
struct SimulationProvenance<'a> {
    config_hash: String,
    seed: u64,
    reps: usize,
    cells: Vec<String>,
    npsurvey_version: &'a str,
    cli_version: &'a str,
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt6(v: Option<f64>) -> String {
    v.map(sig6).unwrap_or_default()
}

/// A metric row's numbers are finite by construction; check anyway so a
/// NaN never reaches a file.
fn check_row(cell: &str, what: &str, m: &MetricRow) -> CliResult<()> {
    let values = [Some(m.mean), Some(m.pct_rb), Some(m.rrmse), m.sd, m.se, m.cp, m.al];
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::Internal(format!("non-finite metric for {what} in cell {cell}")));
    }
    Ok(())
}

const ESTIMATOR_HEADER: &str =
    "cell,expected_n_a,n_b,gamma,estimator,used,excluded,floored,mean,pct_rb,rrmse,sd,se,cp,al";
const THETA_HEADER: &str = "cell,expected_n_a,n_b,gamma,method,nmr,parameter,true_value,mean,pct_rb,rrmse,sd";

fn estimator_csv(results: &[(CellConfig, MetricsTable)]) -> CliResult<String> {
    let mut out = format!("{ESTIMATOR_HEADER}\n");
    for (cell, table) in results {
        let label = cell.label();
        for e in &table.estimators {
            let prefix = format!(
                "{label},{},{},{},{},{},{},{}",
                cell.expected_n_a, cell.n_b, cell.gamma, e.kind, e.used, e.excluded, e.floored
            );
            match &e.metrics {
                Some(m) => {
                    check_row(&label, e.kind.name(), m)?;
                    let _ = writeln!(
                        out,
                        "{prefix},{},{},{},{},{},{},{}",
                        m.mean,
                        m.pct_rb,
                        m.rrmse,
                        opt(m.sd),
                        opt(m.se),
                        opt(m.cp),
                        opt(m.al)
                    );
                }
                None => {
                    let _ = writeln!(out, "{prefix},,,,,,,");
                }
            }
        }
    }
    Ok(out)
}

fn theta_csv(results: &[(CellConfig, MetricsTable)]) -> CliResult<String> {
    let mut out = format!("{THETA_HEADER}\n");
    for (cell, table) in results {
        let label = cell.label();
        for t in &table.theta {
            for p in &t.params {
                let prefix = format!(
                    "{label},{},{},{},{},{},{},{}",
                    cell.expected_n_a, cell.n_b, cell.gamma, t.method, t.nmr, p.name, p.true_value
                );
                match &p.metrics {
                    Some(m) => {
                        check_row(&label, &p.name, m)?;
                        let _ = writeln!(out, "{prefix},{},{},{},{}", m.mean, m.pct_rb, m.rrmse, opt(m.sd));
                    }
                    None => {
                        let _ = writeln!(out, "{prefix},,,,");
                    }
                }
            }
        }
    }
    Ok(out)
}

fn pad_rows(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|j| rows.iter().filter_map(|r| r.get(j)).map(|c| c.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j == 0 {
                    format!("{c:<w$}", w = widths[j])
                } else {
                    format!("{c:>w$}", w = widths[j])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn text_summary(results: &[(CellConfig, MetricsTable)]) -> String {
    let mut out = String::new();
    for (cell, table) in results {
        let _ = writeln!(
            out,
            "E(n_A) = {}, n_B = {}, gamma = {}  (alpha = {}, mu0 = {}, mean n_A = {}, reps = {})",
            cell.expected_n_a,
            cell.n_b,
            cell.gamma,
            table.alpha,
            sig6(table.mu0),
            sig6(table.mean_n_a),
            table.reps
        );
        let mut rows = vec![["estimator", "used", "%RB", "RRMSE", "SD", "SE", "CP", "AL"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()];
        for e in &table.estimators {
            let mut row = vec![e.kind.to_string(), e.used.to_string()];
            match &e.metrics {
                Some(m) => row.extend([
                    sig6(m.pct_rb),
                    sig6(m.rrmse),
                    opt6(m.sd),
                    opt6(m.se),
                    opt6(m.cp),
                    opt6(m.al),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 6)),
            }
            rows.push(row);
        }
        out.push_str(&pad_rows(&rows));
        for t in &table.theta {
            let mut rows = vec![vec![
                format!("theta {} (NMR {})", t.method, t.nmr),
                "true".into(),
                "%RB".into(),
                "RRMSE".into(),
            ]];
            for p in &t.params {
                let (rb, rrmse) = p
                    .metrics
                    .as_ref()
                    .map(|m| (sig6(m.pct_rb), sig6(m.rrmse)))
                    .unwrap_or_default();
                rows.push(vec![p.name.clone(), sig6(p.true_value), rb, rrmse]);
            }
            out.push_str(&pad_rows(&rows));
        }
        for (stage, count) in &table.failures {
            let _ = writeln!(out, "failures {stage}: {count}");
        }
        for (warning, count) in &table.warnings {
            let _ = writeln!(out, "warnings {warning}: {count}");
        }
        out.push('\n');
    }
    out
}

/// Runs every cell and writes `<cell>.json` per cell plus the combined
/// `estimators.csv`, `theta.csv`, `summary.txt` and `provenance.json`.
/// Output bytes depend only on the configuration and seed.
pub fn run_simulation(config: &SimulateConfig, out_dir: &Path, threads: usize) -> CliResult<Vec<MetricsTable>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut results = Vec::with_capacity(config.cells.len());
    for cell in &config.cells {
        let study = config.study(cell, threads)?;
        let table = run_study(&study)?;
        write_file(&out_dir.join(format!("{}.json", cell.label())), &json_bytes(&table)?)?;
        results.push((cell.clone(), table));
    }
    write_file(&out_dir.join("estimators.csv"), estimator_csv(&results)?.as_bytes())?;
    write_file(&out_dir.join("theta.csv"), theta_csv(&results)?.as_bytes())?;
    write_file(&out_dir.join("summary.txt"), text_summary(&results).as_bytes())?;
    let provenance = SimulationProvenance {
        config_hash: config.hash(),
        seed: config.seed,
        reps: config.reps,
        cells: config.cells.iter().map(CellConfig::label).collect(),
        npsurvey_version: npsurvey::VERSION,
        cli_version: env!("CARGO_PKG_VERSION"),
    };
    write_file(&out_dir.join("provenance.json"), &json_bytes(&provenance)?)?;
    Ok(results.into_iter().map(|(_, t)| t).collect())
}
