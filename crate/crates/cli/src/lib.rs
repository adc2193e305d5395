//! Command-line front end: configuration, sample loading, the `analyze`,
//! `simulate` and `fixture` commands, and report rendering.

pub mod analyze;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod simulate;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use npsurvey::simulation::{synthetic_fixture, FixtureSpec, FIXTURE_COLUMNS};
use npsurvey::simulation::MetricsTable;
use serde::Serialize;

pub use analyze::run_analysis;
pub use config::{AnalysisConfig, DesignConfig, SimulateConfig};
pub use error::{CliError, CliResult};
pub use io::{load_sample_a, load_sample_b, read_table, schema_from_config};
pub use report::{emit_report, parse_json_report, Format, Report};
pub use simulate::run_simulation;

#[derive(Debug, Parser)]
#[command(name = "npsurvey", version, about = "Mean estimation from a nonignorable non-probability sample")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the models to two sample files and report the estimates.
    Analyze(AnalyzeArgs),
    /// Run Monte-Carlo study cells and write their metrics.
    Simulate(SimulateArgs),
    /// Write a synthetic two-sample dataset with known truth.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Non-probability sample: header `y,<covariates...>`.
    #[arg(long)]
    pub sample_a: PathBuf,
    /// Reference sample: header `d,<covariates...>`.
    #[arg(long)]
    pub sample_b: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// json, csv or table; defaults to the extension of `--out`.
    #[arg(long)]
    pub format: Option<Format>,
    /// Comma-separated estimator list replacing the configured one.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Proceed without an instrument column.
    #[arg(long)]
    pub allow_no_instrument: bool,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// Worker threads for the design-variance sums; 0 = all cores.
    #[arg(long, env = "NPSURVEY_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Do not echo the report table to stdout.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads over replications; 0 = all cores, 1 = sequential.
    #[arg(long, env = "NPSURVEY_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Overrides the configured sampling seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

fn delimiter_byte(c: char) -> CliResult<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| CliError::Usage(format!("delimiter `{c}` is not a single ASCII character")))
}

/// Loads the configuration and samples, runs the analysis and writes the
/// report to `args.out`.
pub fn cmd_analyze(args: &AnalyzeArgs) -> CliResult<Report> {
    let mut config = AnalysisConfig::load(&args.config)?;
    if let Some(list) = &args.estimators {
        config.estimators = config::parse_estimators(list)?;
    }
    config.allow_no_instrument |= args.allow_no_instrument;
    config.validate()?;
    let delimiter = delimiter_byte(args.delimiter)?;
    let schema = schema_from_config(&config)?;
    let a = load_sample_a(&args.sample_a, &schema, config.family, delimiter)?;
    let b = load_sample_b(&args.sample_b, &schema, &config.design, delimiter)?;
    let report = run_analysis(&config, &a, &b, args.threads)?;
    let format = args.format.unwrap_or_else(|| Format::from_path(&args.out));
    simulate::write_file(&args.out, &emit_report(&report, format)?)?;
    Ok(report)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<Vec<MetricsTable>> {
    let mut config = SimulateConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    run_simulation(&config, &args.out, args.threads)
}

#[derive(Serialize)]
struct FixtureTruth {
    mu0: f64,
    theta: npsurvey::Theta,
    xi: npsurvey::Xi,
    spec: FixtureSpec,
}

/// Writes `sample_a.csv`, `sample_b.csv`, `analysis.toml` and `truth.json`.
pub fn cmd_fixture(args: &FixtureArgs) -> CliResult<()> {
    let mut spec = FixtureSpec::default();
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(gamma) = args.gamma {
        spec.gamma = gamma;
    }
    write_fixture(&spec, &args.out)
}

pub fn write_fixture(spec: &FixtureSpec, out: &Path) -> CliResult<()> {
    let fx = synthetic_fixture(spec)?;
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let p = FIXTURE_COLUMNS.len();
    let header = |lead: &str| -> Vec<String> {
        std::iter::once(lead.to_string())
            .chain(FIXTURE_COLUMNS.iter().map(|c| c.to_string()))
            .collect()
    };
    let rows_a = fx.a.x().chunks(p).zip(fx.a.y()).map(|(x, y)| {
        let mut row = vec![*y];
        row.extend_from_slice(x);
        row
    });
    io::write_table(&out.join("sample_a.csv"), &header("y"), rows_a)?;
    let rows_b = fx.b.x().chunks(p).zip(fx.b.d()).map(|(x, d)| {
        let mut row = vec![*d];
        row.extend_from_slice(x);
        row
    });
    io::write_table(&out.join("sample_b.csv"), &header("d"), rows_b)?;

    let quoted = |cols: &[&str]| cols.iter().map(|c| format!("\"{c}\"")).collect::<Vec<_>>().join(", ");
    let (shared, instrument) = FIXTURE_COLUMNS.split_at(p - 1);
    let toml = format!(
        "family = \"bernoulli-logistic\"\n\
         shared = [{}]\n\
         instruments = [{}]\n\
         estimators = [\"naive\", \"reg2\", \"ipw2\", \"dr2\", \"reg\", \"ipw\", \"aipw\", \"el\"]\n\
         level = 0.95\n\
         seed = {}\n\n\
         [design]\n\
         kind = \"srswor\"\n\
         N = {}\n\
         n = {}\n",
        quoted(shared),
        quoted(instrument),
        spec.seed,
        spec.population,
        spec.n_b
    );
    simulate::write_file(&out.join("analysis.toml"), toml.as_bytes())?;
    let truth = FixtureTruth {
        mu0: fx.mu0,
        theta: fx.theta_true,
        xi: fx.xi_true,
        spec: spec.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&truth).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    simulate::write_file(&out.join("truth.json"), &bytes)
}
