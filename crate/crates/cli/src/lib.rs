//! Command-line front end: synthetic fixtures, ingestion, training,
//! assessment, what-if queries, descriptive reports and the HTTP service.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 degenerate data.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use edurisk::dataset::{
    aggregate, generate_synthetic, parse_census, parse_connectivity, parse_students, read_municipality_csv,
    split_by_year, synthesize_sources, write_municipality_csv, write_raw_tables, DatasetError, EffectSizes,
    SynthConfig,
};
use edurisk::intervention::{batch_plan, minimal_intervention, state_whatif, whatif_response, InterventionDelta, InterventionError, Knob};
use edurisk::models::forest::with_threads;
use edurisk::models::{EvalReport, ModelError};
use edurisk::risk::{
    assess, evaluate, join_geojson, state_summary, train_bundle, write_assessments_csv, RegressionTarget,
    RiskError, MODEL_NAMES,
};
use edurisk::stats::{bonferroni_pairwise, correlation_matrix, group_means, trend_report, Scope, StatsError};
use edurisk::{Covariable, Level, MunicipalityYear, RiskConfig, RiskModelBundle};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;

/// An error with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn usage(e: impl Into<anyhow::Error>) -> Self {
        CliError { code: EXIT_USAGE, error: e.into() }
    }

    pub fn degenerate(e: impl Into<anyhow::Error>) -> Self {
        CliError { code: EXIT_DEGENERATE, error: e.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn model_exit(e: &ModelError) -> i32 {
    match e {
        ModelError::OneClass | ModelError::Collinear(_) | ModelError::ZeroVariance(_) | ModelError::Empty => {
            EXIT_DEGENERATE
        }
        _ => EXIT_USAGE,
    }
}

fn risk_exit(e: &RiskError) -> i32 {
    match e {
        RiskError::Degenerate(_) | RiskError::TooFewRows { .. } => EXIT_DEGENERATE,
        RiskError::Model(m) => model_exit(m),
        _ => EXIT_USAGE,
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        CliError { code: risk_exit(&e), error: e.into() }
    }
}

impl From<InterventionError> for CliError {
    fn from(e: InterventionError) -> Self {
        let code = match &e {
            InterventionError::Risk(r) => risk_exit(r),
            _ => EXIT_USAGE,
        };
        CliError { code, error: e.into() }
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        let code = match e {
            StatsError::ZeroVariance(_) | StatsError::TooFewRows { .. } => EXIT_DEGENERATE,
            _ => EXIT_USAGE,
        };
        CliError { code, error: e.into() }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::usage(e)
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::usage(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "edurisk", version, about = "Municipality academic-vulnerability pipeline")]
pub struct Cli {
    /// TOML file with default values for flags (flags take precedence).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true, env = "RISK_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic students/connectivity/census fixture triple.
    Synth(SynthArgs),
    /// Aggregate the three source tables into one row per municipality-year.
    Ingest(IngestArgs),
    /// Train the three models and evaluate them on the validation year.
    Train(TrainArgs),
    /// Assess municipalities with a trained bundle.
    Assess(AssessArgs),
    /// Evaluate a hypothetical improvement or search for a minimal one.
    Whatif(WhatifArgs),
    /// Descriptive statistics: correlations, level means, pairwise tests, trends.
    Report(ReportArgs),
    /// Serve the read-only JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub municipalities: Option<usize>,
    /// Years as `2015-2019` or `2015,2016`.
    #[arg(long)]
    pub years: Option<String>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Remove every planted effect.
    #[arg(long)]
    pub null: bool,
    #[arg(long)]
    pub effect_internet: Option<f64>,
    #[arg(long)]
    pub effect_computer: Option<f64>,
    #[arg(long)]
    pub effect_ethnic: Option<f64>,
    #[arg(long)]
    pub effect_school: Option<f64>,
    #[arg(long)]
    pub effect_connectivity: Option<f64>,
    #[arg(long)]
    pub effect_rural: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Also write the planted aggregated table as `aggregated.csv`.
    #[arg(long)]
    pub write_aggregated: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub students: PathBuf,
    #[arg(long)]
    pub connectivity: PathBuf,
    #[arg(long)]
    pub census: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail on the first malformed row instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Score,
    Label,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Aggregated CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Bundle JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// Evaluation report JSON output (default: `<out>.eval.json`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub depth_m: Option<usize>,
    #[arg(long)]
    pub depth_l: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Default: every year before the validation year.
    #[arg(long)]
    pub train_years: Option<String>,
    /// Default: the latest year in the data.
    #[arg(long)]
    pub val_year: Option<i32>,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long, value_enum)]
    pub regression_target: Option<TargetArg>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Assessment CSV output.
    #[arg(long)]
    pub out: PathBuf,
    /// Only assess this year.
    #[arg(long)]
    pub year: Option<i32>,
    /// GeoJSON FeatureCollection whose features carry a `code` property.
    #[arg(long, requires = "geojson_out")]
    pub geojson: Option<PathBuf>,
    #[arg(long, requires = "geojson")]
    pub geojson_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WhatifArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub year: i32,
    /// Municipality code; omit with `--state` or `--all`.
    #[arg(long, conflicts_with_all = ["state", "all"])]
    pub code: Option<u32>,
    /// Apply the delta to every municipality of this state.
    #[arg(long, conflicts_with = "all")]
    pub state: Option<u32>,
    /// Plan a search over every municipality of the year.
    #[arg(long, requires = "knob")]
    pub all: bool,
    /// Search this knob (internet, computer, connectivity) for a minimal delta.
    #[arg(long)]
    pub knob: Option<String>,
    #[arg(long, requires = "knob")]
    pub target: Option<String>,
    #[arg(long, requires = "knob")]
    pub step: Option<f64>,
    #[arg(long, requires = "knob")]
    pub max_delta: Option<f64>,
    /// Percentage points of internet access to add.
    #[arg(long, conflicts_with = "knob", allow_negative_numbers = true)]
    pub d_internet: Option<f64>,
    /// Percentage points of computer ownership to add.
    #[arg(long, conflicts_with = "knob", allow_negative_numbers = true)]
    pub d_computer: Option<f64>,
    /// Internet subscriptions to add.
    #[arg(long, conflicts_with = "knob", allow_negative_numbers = true)]
    pub d_connectivity: Option<f64>,
    /// Also write the JSON result here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Year to describe (default: latest in the data).
    #[arg(long)]
    pub year: Option<i32>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Restrict the trend table to these state codes (comma separated).
    #[arg(long)]
    pub states: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, env = "RISK_PORT")]
    pub port: Option<u16>,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub cors_origin: Option<String>,
}

/// Optional defaults file. Keys mirror the long flags with `_` for `-`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub k: Option<f64>,
    pub depth_m: Option<usize>,
    pub depth_l: Option<usize>,
    pub alpha: Option<f64>,
    pub train_years: Option<String>,
    pub val_year: Option<i32>,
    pub n_trees: Option<usize>,
    pub regression_target: Option<RegressionTarget>,
    pub municipalities: Option<usize>,
    pub years: Option<String>,
    pub states: Option<usize>,
    pub port: Option<u16>,
    pub host: Option<String>,
    pub cors_origin: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| CliError::usage(anyhow!("config {}: {e}", path.display())))
    }
}

/// Provenance record written next to every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// RFC 3339; taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
    /// SHA-256 of every input and output file, keyed by path.
    pub checksums: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl RunManifest {
    fn new(subcommand: &str, config: impl Serialize, seed: Option<u64>) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed,
            timestamp: timestamp(),
            checksums: BTreeMap::new(),
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.insert(name.to_string(), path.display().to_string());
        self
    }

    fn output(mut self, name: &str, path: &Path) -> Self {
        self.outputs.insert(name.to_string(), path.display().to_string());
        self
    }

    /// Checksums all listed files and writes the manifest to `path`.
    fn write(mut self, path: &Path) -> CliResult<()> {
        for p in self.inputs.values().chain(self.outputs.values()) {
            self.checksums.insert(p.clone(), sha256_file(Path::new(p))?);
        }
        write_json(path, &self)
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::usage(anyhow!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::usage(anyhow!("cannot create {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).context("serializing JSON")?;
    w.write_all(b"\n").and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_rows(path: &Path) -> CliResult<Vec<MunicipalityYear>> {
    Ok(read_municipality_csv(open(path)?)?)
}

pub fn read_bundle(path: &Path) -> CliResult<RiskModelBundle> {
    let text = fs::read_to_string(path).map_err(|e| CliError::usage(anyhow!("cannot read {}: {e}", path.display())))?;
    RiskModelBundle::from_json(&text).map_err(|e| CliError::usage(anyhow!("bundle {}: {e}", path.display())))
}

pub fn write_bundle(path: &Path, bundle: &RiskModelBundle) -> CliResult<()> {
    let mut w = create(path)?;
    w.write_all(bundle.to_json()?.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .and_then(|_| w.flush())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Parses `2015-2019`, `2015,2017` or a mix such as `2014,2016-2018`.
pub fn parse_years(s: &str) -> CliResult<Vec<i32>> {
    let bad = || CliError::usage(anyhow!("invalid year list `{s}`"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (i32, i32) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Settings shared by every subcommand.
pub struct RunContext {
    pub file: FileConfig,
    pub threads: Option<usize>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    if threads == Some(0) {
        return Err(CliError::usage(anyhow!("--threads must be at least 1")));
    }
    let ctx = RunContext { file, threads };
    match cli.command {
        Command::Serve(a) => cmd_serve(&a, &ctx),
        cmd => with_threads(threads, || match cmd {
            Command::Synth(a) => cmd_synth(&a, &ctx),
            Command::Ingest(a) => cmd_ingest(&a, &ctx),
            Command::Train(a) => cmd_train(&a, &ctx).map(|_| ()),
            Command::Assess(a) => cmd_assess(&a, &ctx),
            Command::Whatif(a) => cmd_whatif(&a, &ctx).map(|_| ()),
            Command::Report(a) => cmd_report(&a, &ctx),
            Command::Serve(_) => unreachable!("handled above"),
        })
        .map_err(|e| CliError::usage(anyhow!(e)))?,
    }
}

pub fn cmd_synth(args: &SynthArgs, ctx: &RunContext) -> CliResult<()> {
    let base = if args.null { SynthConfig::null() } else { SynthConfig::default() };
    let e = base.effects;
    let cfg = SynthConfig {
        municipalities: args.municipalities.or(ctx.file.municipalities).unwrap_or(base.municipalities),
        years: match args.years.as_ref().or(ctx.file.years.as_ref()) {
            Some(y) => parse_years(y)?,
            None => base.years.clone(),
        },
        states: args.states.or(ctx.file.states).unwrap_or(base.states),
        effects: EffectSizes {
            internet: args.effect_internet.unwrap_or(e.internet),
            computer: args.effect_computer.unwrap_or(e.computer),
            ethnic: args.effect_ethnic.unwrap_or(e.ethnic),
            school: args.effect_school.unwrap_or(e.school),
            connectivity: args.effect_connectivity.unwrap_or(e.connectivity),
            rural: args.effect_rural.unwrap_or(e.rural),
        },
        noise_sd: args.noise_sd.unwrap_or(base.noise_sd),
        ..base
    };
    let seed = args.seed.or(ctx.file.seed).unwrap_or(0);
    let rows = generate_synthetic(&cfg, seed)?;
    let src = synthesize_sources(&rows, seed);
    let dir = &args.out_dir;
    let paths = ["students.csv", "connectivity.csv", "census.csv"].map(|f| dir.join(f));
    write_raw_tables(&src.students, &src.connectivity, &src.census, create(&paths[0])?, create(&paths[1])?, create(&paths[2])?)?;
    let mut manifest = RunManifest::new("synth", &cfg, Some(seed))
        .output("students", &paths[0])
        .output("connectivity", &paths[1])
        .output("census", &paths[2]);
    if args.write_aggregated {
        let agg = dir.join("aggregated.csv");
        let mut w = create(&agg)?;
        write_municipality_csv(&rows, &mut w)?;
        w.flush().context("writing aggregated.csv")?;
        manifest = manifest.output("aggregated", &agg);
    }
    manifest.write(&dir.join("manifest.json"))?;
    println!(
        "wrote {} students, {} connectivity and {} census records ({} municipality-years) to {}",
        src.students.len(),
        src.connectivity.len(),
        src.census.len(),
        rows.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_ingest(args: &IngestArgs, _ctx: &RunContext) -> CliResult<()> {
    let students = parse_students(open(&args.students)?, args.strict)?;
    let conn = parse_connectivity(open(&args.connectivity)?, args.strict)?;
    let census = parse_census(open(&args.census)?, args.strict)?;
    for (table, errs) in [("students", &students.row_errors), ("connectivity", &conn.row_errors), ("census", &census.row_errors)] {
        for e in errs.iter() {
            eprintln!("warning: {table}: skipped {e}");
        }
    }
    let agg = aggregate(&students.records, &conn.records, &census.records)?;
    for w in &agg.warnings {
        eprintln!("warning: {w}");
    }
    let mut w = create(&args.out)?;
    write_municipality_csv(&agg.rows, &mut w)?;
    w.flush().with_context(|| format!("writing {}", args.out.display()))?;
    RunManifest::new("ingest", serde_json::json!({ "strict": args.strict }), None)
        .input("students", &args.students)
        .input("connectivity", &args.connectivity)
        .input("census", &args.census)
        .output("aggregated", &args.out)
        .write(&manifest_path(&args.out))?;
    println!(
        "students: {} read, {} skipped; connectivity: {} read, {} skipped; census: {} read, {} skipped",
        students.records.len(),
        students.row_errors.len(),
        conn.records.len(),
        conn.row_errors.len(),
        census.records.len(),
        census.row_errors.len()
    );
    println!("{} municipality-year rows written to {}", agg.rows.len(), args.out.display());
    Ok(())
}

/// Resolved training configuration: flags, then config file, then defaults.
pub fn resolve_train_config(args: &TrainArgs, file: &FileConfig, rows: &[MunicipalityYear]) -> CliResult<RiskConfig> {
    let d = RiskConfig::default();
    let validation_year = match args.val_year.or(file.val_year) {
        Some(y) => y,
        None => rows.iter().map(|r| r.year).max().ok_or_else(|| CliError::usage(anyhow!("no rows in data")))?,
    };
    let train_years = match args.train_years.as_ref().or(file.train_years.as_ref()) {
        Some(s) => parse_years(s)?,
        None => {
            let mut y: Vec<i32> = rows.iter().map(|r| r.year).filter(|&y| y < validation_year).collect();
            y.sort_unstable();
            y.dedup();
            y
        }
    };
    let cfg = RiskConfig {
        k: args.k.or(file.k).unwrap_or(d.k),
        depth_m: args.depth_m.or(file.depth_m).unwrap_or(d.depth_m),
        depth_l: args.depth_l.or(file.depth_l).unwrap_or(d.depth_l),
        alpha: args.alpha.or(file.alpha).unwrap_or(d.alpha),
        train_years,
        validation_year,
        n_trees: args.n_trees.or(file.n_trees).unwrap_or(d.n_trees),
        regression_target: match args.regression_target {
            Some(TargetArg::Score) => RegressionTarget::Score,
            Some(TargetArg::Label) => RegressionTarget::Label,
            None => file.regression_target.unwrap_or_default(),
        },
    };
    cfg.validate().map_err(CliError::usage)?;
    Ok(cfg)
}

fn report_path(args: &TrainArgs) -> PathBuf {
    args.report.clone().unwrap_or_else(|| {
        let mut s = args.out.as_os_str().to_owned();
        s.push(".eval.json");
        PathBuf::from(s)
    })
}

/// AUC table and the level confusion matrix as plain text.
pub fn format_eval(report: &EvalReport) -> String {
    let mut s = String::new();
    let label = |m: &'static str| match m {
        "logistic_regression" => "Logistic regression",
        "regression_forest" => "Random forest regressor",
        "classifier_forest" => "Random forest classifier",
        other => other,
    };
    s.push_str(&format!("{:<28}{:>8}\n", "Classification algorithm", "AUC"));
    match &report.auc_error {
        Some(e) => s.push_str(&format!("AUC unavailable: {e}\n")),
        None => {
            for m in MODEL_NAMES {
                if let Some(a) = report.auc_per_model.get(m) {
                    s.push_str(&format!("{:<28}{:>8.4}\n", label(m), a));
                }
            }
        }
    }
    s.push_str(&format!(
        "\nValidation rows: {} ({} at risk)\n{:<14}{:>8}{:>8}{:>8}{:>8}\n",
        report.n_rows, report.n_at_risk, "TOTAL_RISK", 0, 1, 2, 3
    ));
    for (name, row) in ["Not at risk", "At risk"].iter().zip(&report.confusion) {
        s.push_str(&format!("{:<14}{:>8}{:>8}{:>8}{:>8}\n", name, row[0], row[1], row[2], row[3]));
    }
    let b = report.binarized_confusion;
    s.push_str(&format!(
        "Binarized (flagged = TOTAL_RISK >= 1): TN {} FP {} FN {} TP {}\n",
        b[0][0], b[0][1], b[1][0], b[1][1]
    ));
    s
}

pub fn cmd_train(args: &TrainArgs, ctx: &RunContext) -> CliResult<RiskModelBundle> {
    let rows = read_rows(&args.data)?;
    let cfg = resolve_train_config(args, &ctx.file, &rows)?;
    let seed = args.seed.or(ctx.file.seed).unwrap_or(0);
    let split = split_by_year(&rows, &cfg.train_years, cfg.validation_year)?;
    let mut bundle = train_bundle(&split.train, &cfg, seed, ctx.threads)?;
    let report = evaluate(&bundle, &split.validation)?;
    bundle.eval = Some(report.clone());
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = &report.auc_error {
        eprintln!("warning: validation AUC unavailable: {e}");
    }
    write_bundle(&args.out, &bundle)?;
    let rp = report_path(args);
    write_json(&rp, &report)?;
    RunManifest::new("train", &cfg, Some(seed))
        .input("data", &args.data)
        .output("bundle", &args.out)
        .output("report", &rp)
        .write(&manifest_path(&args.out))?;
    let selected: Vec<&str> = bundle.selected_features.iter().map(|c| c.name()).collect();
    println!("training rows: {}, validation rows: {}", split.train.len(), split.validation.len());
    println!("selected covariables: {}", selected.join(", "));
    for (y, t) in &bundle.thresholds {
        println!("threshold {y}: {t:.4}");
    }
    println!();
    print!("{}", format_eval(&report));
    Ok(bundle)
}

fn select_year(rows: Vec<MunicipalityYear>, year: Option<i32>) -> CliResult<Vec<MunicipalityYear>> {
    match year {
        None => Ok(rows),
        Some(y) => {
            let sel: Vec<_> = rows.into_iter().filter(|r| r.year == y).collect();
            if sel.is_empty() {
                return Err(CliError::usage(anyhow!("no rows for year {y}")));
            }
            Ok(sel)
        }
    }
}

pub fn cmd_assess(args: &AssessArgs, _ctx: &RunContext) -> CliResult<()> {
    let bundle = read_bundle(&args.bundle)?;
    let rows = select_year(read_rows(&args.data)?, args.year)?;
    let assessments = assess(&bundle, &rows)?;
    let mut w = create(&args.out)?;
    write_assessments_csv(&assessments, &mut w)?;
    w.flush().with_context(|| format!("writing {}", args.out.display()))?;
    let mut manifest = RunManifest::new("assess", serde_json::json!({ "year": args.year }), Some(bundle.seed))
        .input("bundle", &args.bundle)
        .input("data", &args.data)
        .output("assessments", &args.out);
    if let (Some(gin), Some(gout)) = (&args.geojson, &args.geojson_out) {
        let g: serde_json::Value =
            serde_json::from_reader(open(gin)?).map_err(|e| CliError::usage(anyhow!("{}: {e}", gin.display())))?;
        let (joined, unmatched) = join_geojson(&g, &assessments)?;
        if !unmatched.is_empty() {
            eprintln!("warning: {} GeoJSON features without an assessment: {}", unmatched.len(), unmatched.join(", "));
        }
        write_json(gout, &joined)?;
        manifest = manifest.input("geojson", gin).output("geojson", gout);
    }
    manifest.write(&manifest_path(&args.out))?;
    let mut counts = [0usize; 4];
    for a in &assessments {
        counts[a.total_risk as usize] += 1;
    }
    println!("{} assessments written to {}", assessments.len(), args.out.display());
    for (l, c) in Level::ALL.iter().zip(counts) {
        println!("{:<8}{:>8}", l.as_str(), c);
    }
    Ok(())
}

/// Runs a what-if command and returns the JSON it printed.
pub fn cmd_whatif(args: &WhatifArgs, _ctx: &RunContext) -> CliResult<serde_json::Value> {
    let bundle = read_bundle(&args.bundle)?;
    let rows = read_rows(&args.data)?;
    let find_row = |code: u32| {
        rows.iter()
            .find(|r| r.code == code && r.year == args.year)
            .ok_or_else(|| CliError::usage(anyhow!("no municipality {code} in year {}", args.year)))
    };
    let value = if let Some(knob) = &args.knob {
        let knob: Knob = knob.parse()?;
        let target: Level = match &args.target {
            Some(t) => t.parse().map_err(CliError::usage)?,
            None => Level::None,
        };
        let step = args.step.unwrap_or(knob.default_step());
        let max_delta = args.max_delta.unwrap_or(knob.default_max_delta());
        if args.all || args.state.is_some() {
            let sel: Vec<MunicipalityYear> = rows
                .iter()
                .filter(|r| r.year == args.year && args.state.is_none_or(|s| r.state_code == s))
                .cloned()
                .collect();
            if sel.is_empty() {
                return Err(CliError::usage(anyhow!("no rows match the selection in year {}", args.year)));
            }
            serde_json::to_value(batch_plan(&bundle, &sel, knob, target, step, max_delta)?).context("serializing")?
        } else {
            let code = args.code.ok_or_else(|| CliError::usage(anyhow!("--code, --state or --all is required")))?;
            let res = minimal_intervention(&bundle, find_row(code)?, knob, target, step, max_delta)?;
            let trace: Vec<String> = res.search_trace.iter().map(|e| format!("{}:{}", e.delta, e.level)).collect();
            eprintln!(
                "{} {} -> {} with +{} {} ({})",
                if res.achieved { "achieved" } else { "not achieved; best level" },
                res.baseline_level,
                res.new_level,
                res.knob_delta(),
                knob,
                trace.join(" ")
            );
            serde_json::to_value(res).context("serializing")?
        }
    } else {
        let delta = InterventionDelta {
            d_internet: args.d_internet.unwrap_or(0.0),
            d_computer: args.d_computer.unwrap_or(0.0),
            d_connectivity_subscribers: args.d_connectivity.unwrap_or(0.0),
        };
        match (args.code, args.state) {
            (Some(code), _) => serde_json::to_value(whatif_response(&bundle, find_row(code)?, &delta)?).context("serializing")?,
            (None, Some(state)) => serde_json::to_value(state_whatif(&bundle, &rows, state, args.year, &delta)?).context("serializing")?,
            (None, None) => return Err(CliError::usage(anyhow!("--code or --state is required for a direct what-if"))),
        }
    };
    println!("{}", serde_json::to_string_pretty(&value).context("serializing")?);
    if let Some(out) = &args.out {
        write_json(out, &value)?;
        RunManifest::new("whatif", serde_json::json!({ "year": args.year, "code": args.code, "state": args.state, "knob": args.knob }), Some(bundle.seed))
            .input("bundle", &args.bundle)
            .input("data", &args.data)
            .output("result", out)
            .write(&manifest_path(out))?;
    }
    Ok(value)
}

#[derive(Debug, Serialize)]
struct Report {
    year: i32,
    n_rows: usize,
    correlation: edurisk::stats::CorrelationMatrix,
    level_means: Vec<edurisk::stats::GroupSummary>,
    pairwise_tests: edurisk::stats::BonferroniReport,
    state_summary: Vec<edurisk::risk::StateSummary>,
    trends: Vec<edurisk::stats::TrendRow>,
}

const REPORT_COVARIABLES: [Covariable; 7] = [
    Covariable::Internet,
    Covariable::Computer,
    Covariable::Ethnic,
    Covariable::School,
    Covariable::GlobalScore,
    Covariable::Connectivity,
    Covariable::RuralIndex,
];

pub fn cmd_report(args: &ReportArgs, _ctx: &RunContext) -> CliResult<()> {
    let bundle = read_bundle(&args.bundle)?;
    let all = read_rows(&args.data)?;
    let year = match args.year {
        Some(y) => y,
        None => all.iter().map(|r| r.year).max().ok_or_else(|| CliError::usage(anyhow!("no rows in data")))?,
    };
    let rows = select_year(all.clone(), Some(year))?;
    let assessments = assess(&bundle, &rows)?;
    let alpha = args.alpha.unwrap_or(0.05);
    let scope = match &args.states {
        Some(s) => Scope::States(
            s.split(',')
                .map(|p| p.trim().parse().map_err(|_| CliError::usage(anyhow!("invalid state list `{s}`"))))
                .collect::<CliResult<_>>()?,
        ),
        None => Scope::Country,
    };
    let states: HashMap<u32, u32> = rows.iter().map(|r| (r.code, r.state_code)).collect();
    let report = Report {
        year,
        n_rows: rows.len(),
        correlation: correlation_matrix(&rows, &REPORT_COVARIABLES)?,
        level_means: group_means(&rows, &assessments, &REPORT_COVARIABLES)?,
        pairwise_tests: bonferroni_pairwise(&rows, &assessments, &REPORT_COVARIABLES, alpha)?,
        state_summary: state_summary(&assessments, &states)?,
        trends: trend_report(&all, &scope)?,
    };
    write_json(&args.out, &report)?;
    RunManifest::new("report", serde_json::json!({ "year": year, "alpha": alpha, "states": args.states }), Some(bundle.seed))
        .input("bundle", &args.bundle)
        .input("data", &args.data)
        .output("report", &args.out)
        .write(&manifest_path(&args.out))?;
    print!("{}", format_level_means(&report.level_means));
    println!(
        "\n{} pairwise tests, Bonferroni alpha {:.3e}; {} significant",
        report.pairwise_tests.n_tests,
        report.pairwise_tests.adjusted_alpha,
        report.pairwise_tests.results.iter().filter(|r| r.significant).count()
    );
    for n in &report.pairwise_tests.notices {
        println!("note: {n}");
    }
    Ok(())
}

/// Level-by-covariable mean table.
pub fn format_level_means(groups: &[edurisk::stats::GroupSummary]) -> String {
    let mut s = format!("{:<14}", "Covariable");
    for g in groups {
        s.push_str(&format!("{:>16}", format!("{} (n={})", g.level, g.n)));
    }
    s.push('\n');
    for c in REPORT_COVARIABLES {
        s.push_str(&format!("{:<14}", c.name()));
        for g in groups {
            s.push_str(&format!("{:>16.2}", g.mean_per_covariable[&c]));
        }
        s.push('\n');
    }
    s
}

pub fn cmd_serve(args: &ServeArgs, ctx: &RunContext) -> CliResult<()> {
    let bundle = read_bundle(&args.bundle)?;
    let rows = read_rows(&args.data)?;
    let state = edurisk_service::ServiceState::load(bundle, rows).map_err(|e| CliError::usage(anyhow!(e)))?;
    let cors = args.cors_origin.clone().or(ctx.file.cors_origin.clone());
    let app = edurisk_service::router(Arc::new(state), cors.as_deref()).map_err(|e| CliError::usage(anyhow!(e)))?;
    let port = args.port.or(ctx.file.port).unwrap_or(8080);
    let host = args.host.clone().or(ctx.file.host.clone()).unwrap_or_else(|| "127.0.0.1".to_string());
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(n) = ctx.threads {
        rt.worker_threads(n);
    }
    let rt = rt.enable_all().build().context("starting runtime")?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind((host.as_str(), port))
            .await
            .map_err(|e| CliError::usage(anyhow!("cannot bind {host}:{port}: {e}")))?;
        tracing::info!("listening on {}", listener.local_addr().context("local address")?);
        eprintln!("listening on http://{host}:{port}");
        edurisk_service::serve(listener, app).await.context("server error")?;
        Ok(())
    })
}
