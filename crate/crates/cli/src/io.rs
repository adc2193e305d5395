//! Reading the two sample files. Covariate columns are matched to the
//! configured schema by name, so column order in a file never matters.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use npsurvey::{DesignInfo, Family, Role, SampleA, SampleB, Schema};

use crate::config::{AnalysisConfig, DesignConfig};
use crate::error::{CliError, CliResult};

/// A parsed numeric file: header names and row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub values: Vec<f64>,
    pub rows: usize,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.headers.len() + col]
    }
}

/// Reads a delimiter-separated file whose header is followed by numeric rows.
pub fn read_table(path: &Path, delimiter: u8) -> CliResult<Table> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |row, col, message: String| CliError::Parse {
        path: path.to_path_buf(),
        row,
        col,
        message,
    };
    let csv_err = |e: csv::Error| match e.kind() {
        csv::ErrorKind::Io(_) => CliError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        },
        _ => parse_err(e.position().map_or(0, |p| p.record() as usize), 0, e.to_string()),
    };

    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if headers.iter().all(String::is_empty) {
        return Err(parse_err(0, 1, "empty file: missing header row".into()));
    }
    let mut seen = BTreeSet::new();
    for (j, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(parse_err(0, j + 1, "empty column name".into()));
        }
        if !seen.insert(h) {
            return Err(parse_err(0, j + 1, format!("duplicate column `{h}`")));
        }
    }

    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let row = rows + 1;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() > headers.len() {
            return Err(parse_err(row, headers.len() + 1, "more cells than header columns".into()));
        }
        for (j, name) in headers.iter().enumerate() {
            let cell = record.get(j).unwrap_or("");
            if cell.is_empty() {
                return Err(parse_err(row, j + 1, format!("missing value for `{name}`")));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(row, j + 1, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(row, j + 1, format!("`{cell}` is not finite")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(parse_err(1, 1, "no data rows".into()));
    }
    Ok(Table { headers, values, rows })
}

/// Schema of the configured covariates: shared columns, then instruments.
pub fn schema_from_config(config: &AnalysisConfig) -> CliResult<Arc<Schema>> {
    let names: Vec<String> = config.covariates().map(str::to_string).collect();
    let roles = config
        .shared
        .iter()
        .map(|_| Role::Shared)
        .chain(config.instruments.iter().map(|_| Role::Instrument))
        .collect();
    Schema::new(names, roles)
        .map(Arc::new)
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Column indices of the schema's covariates in `table`, after checking
/// that the file's covariate columns are exactly the schema's.
fn covariate_columns(table: &Table, lead: &str, schema: &Schema, what: &str) -> CliResult<Vec<usize>> {
    let file: BTreeSet<String> = table.headers.iter().filter(|h| *h != lead).cloned().collect();
    let expected: BTreeSet<String> = schema.names().iter().cloned().collect();
    let diff: BTreeSet<String> = file.symmetric_difference(&expected).cloned().collect();
    if !diff.is_empty() {
        return Err(CliError::Schema {
            message: format!("{what} covariate columns differ from the configured schema"),
            columns: diff,
        });
    }
    Ok(schema
        .names()
        .iter()
        .map(|n| table.column(n).expect("checked above"))
        .collect())
}

fn lead_column(table: &Table, lead: &str, path: &Path) -> CliResult<usize> {
    table.column(lead).ok_or_else(|| CliError::Parse {
        path: path.to_path_buf(),
        row: 0,
        col: 1,
        message: format!("missing `{lead}` column"),
    })
}

fn gather(table: &Table, cols: &[usize]) -> Vec<f64> {
    let mut x = Vec::with_capacity(table.rows * cols.len());
    for i in 0..table.rows {
        x.extend(cols.iter().map(|&j| table.get(i, j)));
    }
    x
}

/// Loads `S_A` from a file with header `y,<covariates...>`.
pub fn load_sample_a(path: &Path, schema: &Arc<Schema>, family: Family, delimiter: u8) -> CliResult<SampleA> {
    let table = read_table(path, delimiter)?;
    let y_col = lead_column(&table, "y", path)?;
    let cols = covariate_columns(&table, "y", schema, "sample A")?;
    let y: Vec<f64> = (0..table.rows).map(|i| table.get(i, y_col)).collect();
    if family == Family::BernoulliLogistic {
        if let Some(i) = y.iter().position(|v| *v != 0.0 && *v != 1.0) {
            return Err(CliError::Domain {
                path: path.to_path_buf(),
                row: i + 1,
                message: format!("response {} is not binary", y[i]),
            });
        }
    }
    SampleA::new(schema.clone(), gather(&table, &cols), y).map_err(|e| CliError::Domain {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    })
}

/// Loads `S_B` from a file with header `d,<covariates...>`.
pub fn load_sample_b(path: &Path, schema: &Arc<Schema>, design: &DesignConfig, delimiter: u8) -> CliResult<SampleB> {
    let table = read_table(path, delimiter)?;
    let d_col = lead_column(&table, "d", path)?;
    let cols = covariate_columns(&table, "d", schema, "sample B")?;
    let d: Vec<f64> = (0..table.rows).map(|i| table.get(i, d_col)).collect();
    if let Some(i) = d.iter().position(|v| !(*v > 0.0)) {
        return Err(CliError::Domain {
            path: path.to_path_buf(),
            row: i + 1,
            message: format!("design weight {} must be positive", d[i]),
        });
    }
    let info = match design {
        DesignConfig::Srswor { population, n } => {
            if let Some(n) = n {
                if *n != table.rows {
                    return Err(CliError::Config(format!(
                        "design n = {n} but {} has {} rows",
                        path.display(),
                        table.rows
                    )));
                }
            }
            DesignInfo::srswor(table.rows, *population).map_err(|e| CliError::Config(e.to_string()))?
        }
        DesignConfig::Hajek { population } => DesignInfo::HajekApprox {
            population: *population,
        },
    };
    SampleB::new(schema.clone(), gather(&table, &cols), d, info).map_err(|e| CliError::Domain {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    })
}

/// Writes rows under `header` as comma-separated text with shortest
/// round-trip number formatting.
pub fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    writer.write_record(header).map_err(io)?;
    for row in rows {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .map_err(io)?;
    }
    writer.flush().map_err(|e| CliError::io(path, e))
}
