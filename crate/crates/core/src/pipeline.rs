//! Config-driven experiment runner and artifact layout.
//!
//! ```text
//! <out>/<config hash>/
//!   config.json  series.csv  regimes.csv  labels.csv
//!   report.json  report.md  per_step.csv  regimes_unsupervised.csv  regimes_truth.csv
//!   seed-<s>/matrix.csv  clusters.json
//!            predictions/<METHOD>.csv  weights/<METHOD>.csv
//!            policies/<METHOD>.policy  policies/<METHOD>_rewards.csv
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{cluster_learners, select_k};
use crate::drift::{label_drift, DriftLabel};
use crate::ensemble::{run_average_forecaster, run_ga_forecaster, GaConfig};
use crate::error::{Error, Result};
use crate::eval::{summarize, EvalReport, MethodFailure, RunResults};
use crate::features::default_windows;
use crate::pool::{build_forecast_matrix, enumerate_specs, ForecastMatrix, ModelType, PoolConfig, TrainLength, WindowStrategy};
use crate::rl::{run_foodrl, ClusterChoice, PpoConfig, RlRunSpec};
use crate::series::{load_series, split_train_test, DonationSeries, Frequency, Period};
use crate::stats::derive_seed;
use crate::synth::{generate, suite_scenario, ScenarioConfig};

/// One of the four meta-learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "GA")]
    Ga,
    #[serde(rename = "RL")]
    Rl,
    #[serde(rename = "FoodRL")]
    FoodRl,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sa, Method::Ga, Method::Rl, Method::FoodRl];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sa => "SA",
            Method::Ga => "GA",
            Method::Rl => "RL",
            Method::FoodRl => "FoodRL",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected SA, GA, RL or FoodRL)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Built-in scenario name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Scenario TOML file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_file: Option<PathBuf>,
    /// `period,value` CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Required with `path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Frequency>,
    pub test_periods: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_types: Option<Vec<ModelType>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_lengths: Option<Vec<TrainLength>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_strategies: Option<Vec<WindowStrategy>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub season_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ar_order: Option<usize>,
}

impl PoolSection {
    pub fn resolve(&self, frequency: Frequency) -> PoolConfig {
        let mut pool = PoolConfig::for_frequency(frequency);
        if let Some(v) = &self.model_types {
            pool.model_types = v.clone();
        }
        if let Some(v) = &self.train_lengths {
            pool.train_lengths = v.clone();
        }
        if let Some(v) = &self.window_strategies {
            pool.window_strategies = v.clone();
        }
        if let Some(v) = self.season_length {
            pool.settings.season_length = v;
        }
        if let Some(v) = self.ar_order {
            pool.settings.ar_order = v;
        }
        pool
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterSection {
    /// Fixed cluster count; overrides `candidates`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Silhouette selection over these counts.
    pub candidates: Vec<usize>,
}

impl Default for ClusterSection {
    fn default() -> Self {
        Self {
            k: None,
            candidates: vec![2, 3, 4, 5, 6, 8, 10, 12],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    #[serde(default)]
    pub pool: PoolSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub clusters: ClusterSection,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Output root; excluded from the config hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    /// Seed for the unsupervised drift labels in the report.
    #[serde(default)]
    pub drift_seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for p in [&mut config.data.path, &mut config.data.scenario_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if config.out.is_relative() {
            config.out = base_dir.join(&config.out);
        }
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Field-level checks; referenced files must exist.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        let sources = [d.scenario.is_some(), d.scenario_file.is_some(), d.path.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(Error::Config("data: set exactly one of scenario, scenario_file, path".into()));
        }
        if let Some(name) = &d.scenario {
            suite_scenario(name).map_err(|e| Error::Config(format!("data.scenario: {e}")))?;
        }
        for p in [&d.path, &d.scenario_file].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("data: file {} does not exist", p.display())));
            }
        }
        if d.path.is_some() && d.frequency.is_none() {
            return Err(Error::Config("data.frequency is required with data.path".into()));
        }
        if d.test_periods == 0 {
            return Err(Error::Config("data.test_periods must be positive".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("methods: at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(Error::Config("seeds: duplicate seed".into()));
        }
        if let Some(w) = &self.features.windows {
            if w.is_empty() || w.contains(&0) {
                return Err(Error::Config("features.windows must be non-empty and positive".into()));
            }
        }
        match self.clusters.k {
            Some(0) => return Err(Error::Config("clusters.k must be positive".into())),
            None if self.clusters.candidates.is_empty() || self.clusters.candidates.contains(&0) => {
                return Err(Error::Config("clusters.candidates must be non-empty and positive".into()))
            }
            _ => {}
        }
        self.ga.validate().map_err(|e| Error::Config(format!("ga: {e}")))?;
        self.ppo.validate()?;
        Ok(())
    }

    /// First 16 hex digits of SHA-256 over the canonical JSON form (output root excluded).
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_vec(self)?;
        let digest = Sha256::digest(&json);
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }

    /// Loads or generates the series named by the data section.
    pub fn load_series(&self) -> Result<DonationSeries> {
        let d = &self.data;
        if let Some(name) = &d.scenario {
            return generate(&suite_scenario(name)?);
        }
        if let Some(path) = &d.scenario_file {
            return generate(&ScenarioConfig::load(path)?);
        }
        let path = d.path.as_ref().ok_or_else(|| Error::Config("data: no source".into()))?;
        load_series(path, d.frequency.expect("validated"))
    }

    pub fn cluster_choice(&self) -> ClusterChoice {
        match self.clusters.k {
            Some(k) => ClusterChoice::Fixed(k),
            None => ClusterChoice::Select(self.clusters.candidates.clone()),
        }
    }
}

/// Process exit status for an error: 1 for bad input, 3 otherwise.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_)
        | Error::Validation(_)
        | Error::Parse { .. }
        | Error::InvalidArgument(_)
        | Error::LengthMismatch { .. } => 1,
        _ => 3,
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(
        ".{name}.{}.{}.tmp",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `period,prediction` rows.
pub fn predictions_csv(periods: &[Period], predictions: &[f64]) -> String {
    let mut out = String::from("period,prediction\n");
    for (p, v) in periods.iter().zip(predictions) {
        out.push_str(&format!("{p},{v}\n"));
    }
    out
}

/// Reads a `period,prediction` file (extra columns ignored).
pub fn read_predictions_csv(text: &str, origin: &str) -> Result<Vec<(Period, f64)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(origin, 1, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (pc, vc) = match (col("period"), col("prediction")) {
        (Some(p), Some(v)) => (p, v),
        _ => return Err(parse_err(origin, 1, "expected `period` and `prediction` columns".into())),
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(origin, line, e.to_string()))?;
        let period: Period = rec
            .get(pc)
            .unwrap_or_default()
            .parse()
            .map_err(|e: Error| parse_err(origin, line, e.to_string()))?;
        let value: f64 = rec
            .get(vc)
            .unwrap_or_default()
            .parse()
            .map_err(|_| parse_err(origin, line, "prediction is not a number".into()))?;
        if !value.is_finite() {
            return Err(parse_err(origin, line, "prediction is not finite".into()));
        }
        rows.push((period, value));
    }
    Ok(rows)
}

/// Reads a `period,regime` file.
pub fn read_labels_csv(text: &str, origin: &str) -> Result<Vec<(Period, DriftLabel)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(origin, 1, e.to_string()))?.clone();
    if headers.get(0) != Some("period") || headers.get(1) != Some("regime") {
        return Err(parse_err(origin, 1, "expected header `period,regime`".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(origin, line, e.to_string()))?;
        let period: Period = rec[0].parse().map_err(|e: Error| parse_err(origin, line, e.to_string()))?;
        let label: DriftLabel = rec[1].parse().map_err(|e: Error| parse_err(origin, line, e.to_string()))?;
        rows.push((period, label));
    }
    Ok(rows)
}

/// Attaches ground-truth labels read from a `period,regime` file.
pub fn attach_truth(series: DonationSeries, text: &str, origin: &str) -> Result<DonationSeries> {
    let rows = read_labels_csv(text, origin)?;
    if rows.len() != series.len() || rows.iter().zip(series.periods()).any(|((p, _), q)| p != q) {
        return Err(Error::validation(format!("{origin}: regime periods do not match the series")));
    }
    series.with_regime_truth(rows.into_iter().map(|(_, l)| l).collect())
}

fn parse_err(origin: &str, line: u64, message: String) -> Error {
    Error::Parse {
        path: origin.to_string(),
        line,
        message,
    }
}

fn weights_csv(periods: &[Period], names: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = String::from("period");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (p, row) in periods.iter().zip(rows) {
        out.push_str(&p.to_string());
        for w in row {
            out.push_str(&format!(",{w}"));
        }
        out.push('\n');
    }
    out
}

/// Everything the report needs, shared by `run` and `evaluate`.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub test_periods: Vec<Period>,
    pub test_actuals: Vec<f64>,
    pub labels: Vec<DriftLabel>,
    pub truth: Option<Vec<DriftLabel>>,
    pub periods_per_year: usize,
}

impl EvalContext {
    pub fn new(series: &DonationSeries, test_periods: usize, drift_seed: u64) -> Result<Self> {
        let split = split_train_test(series, test_periods)?;
        let s = split.split_index;
        let labels = label_drift(series, drift_seed)?;
        Ok(Self {
            test_periods: series.periods()[s..].to_vec(),
            test_actuals: series.values()[s..].to_vec(),
            labels: labels[s..].to_vec(),
            truth: series.regime_truth().map(|t| t[s..].to_vec()),
            periods_per_year: series.frequency().periods_per_year(),
        })
    }

    /// Summarizes per-method, per-seed test predictions.
    pub fn report(&self, methods: BTreeMap<String, Vec<Vec<f64>>>, failures: Vec<MethodFailure>) -> Result<EvalReport> {
        let run = RunResults {
            periods: self.test_periods.clone(),
            actuals: self.test_actuals.clone(),
            labels: Some(self.labels.clone()),
            truth_labels: self.truth.clone(),
            methods,
            periods_per_year: self.periods_per_year,
            reference: Method::Sa.as_str().to_string(),
        };
        let mut report = summarize(&run)?;
        report.failures = failures;
        Ok(report)
    }
}

/// Results of one seed for one method.
struct MethodRun {
    predictions: Vec<f64>,
    files: Vec<(PathBuf, Vec<u8>)>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub run_dir: PathBuf,
    pub report: EvalReport,
    /// Test predictions keyed by method, one vector per successful seed.
    pub predictions: BTreeMap<String, Vec<Vec<f64>>>,
}

impl PipelineOutcome {
    /// 0 when every method succeeded on every seed, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

/// Loads, validates and runs a config file.
pub fn run_pipeline(config_path: impl AsRef<Path>) -> Result<PipelineOutcome> {
    let config = ExperimentConfig::load(config_path)?;
    run_experiment(&config)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let hash = config.hash()?;
    let run_dir = config.out.join(&hash);
    info!("run directory {}", run_dir.display());

    let series = config.load_series()?;
    let frequency = series.frequency();
    let split = split_train_test(&series, config.data.test_periods)?;
    let n_train = split.split_index;
    let n = series.len();
    let ctx = EvalContext::new(&series, config.data.test_periods, config.drift_seed)?;

    let pool = config.pool.resolve(frequency);
    let specs = enumerate_specs(&pool)?;
    let matrix = build_forecast_matrix(&series, &specs, &pool.settings)?;
    info!("forecast matrix: {} steps x {} models", matrix.n_steps(), matrix.n_models());
    let matrix_csv = matrix.to_csv();

    write_atomic(&run_dir.join("config.json"), serde_json::to_string_pretty(config)?.as_bytes())?;
    write_atomic(&run_dir.join("series.csv"), series.to_csv().as_bytes())?;
    if let Some(r) = series.regimes_csv() {
        write_atomic(&run_dir.join("regimes.csv"), r.as_bytes())?;
    }
    let labels = label_drift(&series, config.drift_seed)?;
    write_atomic(&run_dir.join("labels.csv"), crate::series::labels_csv(series.periods(), &labels).as_bytes())?;

    let windows = config.features.windows.clone().unwrap_or_else(|| default_windows(frequency));
    let mut methods = config.methods.clone();
    methods.sort();
    methods.dedup();

    type SeedResult = (u64, Vec<(Method, Result<MethodRun>)>, Vec<(PathBuf, Vec<u8>)>);
    let per_seed: Vec<SeedResult> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let seed_dir = run_dir.join(format!("seed-{seed}"));
            let mut results = Vec::new();
            let assignment_json = (|| -> Result<String> {
                let train = matrix.head(n_train);
                let cs = derive_seed(seed, 1);
                let k = match config.cluster_choice() {
                    ClusterChoice::Fixed(k) => k,
                    ClusterChoice::Select(c) => select_k(&train, &c, cs)?,
                    ClusterChoice::None => unreachable!(),
                };
                cluster_learners(&train, k, cs)?.to_json(&names(&matrix))
            })();
            for &method in &methods {
                let r = run_method(method, seed, config, &series, &matrix, n_train, &windows, &seed_dir, &ctx.test_periods);
                if let Err(e) = &r {
                    warn!("{method} failed on seed {seed}: {e}");
                }
                results.push((method, r));
            }
            let mut files = vec![(seed_dir.join("matrix.csv"), matrix_csv.clone().into_bytes())];
            match assignment_json {
                Ok(j) => files.push((seed_dir.join("clusters.json"), j.into_bytes())),
                Err(e) => warn!("clustering failed on seed {seed}: {e}"),
            }
            (seed, results, files)
        })
        .collect();

    let mut predictions: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut failures = Vec::new();
    for (seed, results, files) in per_seed {
        for (path, bytes) in &files {
            write_atomic(path, bytes)?;
        }
        for (method, r) in results {
            match r {
                Ok(run) => {
                    for (path, bytes) in &run.files {
                        write_atomic(path, bytes)?;
                    }
                    predictions.entry(method.to_string()).or_default().push(run.predictions);
                }
                Err(e) => failures.push(MethodFailure {
                    method: method.to_string(),
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    debug_assert!(predictions.values().flatten().all(|p| p.len() == n - n_train));

    let report = ctx.report(predictions.clone(), failures)?;
    write_report(&run_dir, &report)?;
    Ok(PipelineOutcome {
        run_dir,
        report,
        predictions,
    })
}

/// Writes report.json, report.md, per_step.csv and the regime tables.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    write_atomic(&dir.join("report.md"), report.to_markdown().as_bytes())?;
    write_atomic(&dir.join("per_step.csv"), report.per_step_csv().as_bytes())?;
    write_atomic(&dir.join("regimes_unsupervised.csv"), report.regime.to_csv().as_bytes())?;
    if let Some(t) = &report.regime_truth {
        write_atomic(&dir.join("regimes_truth.csv"), t.to_csv().as_bytes())?;
    }
    Ok(())
}

fn names(matrix: &ForecastMatrix) -> Vec<String> {
    matrix.specs().iter().map(|s| s.name()).collect()
}

#[allow(clippy::too_many_arguments)]
fn run_method(
    method: Method,
    seed: u64,
    config: &ExperimentConfig,
    series: &DonationSeries,
    matrix: &ForecastMatrix,
    n_train: usize,
    windows: &[usize],
    seed_dir: &Path,
    test_periods: &[Period],
) -> Result<MethodRun> {
    let n = series.len();
    let pred_path = seed_dir.join("predictions").join(format!("{method}.csv"));
    let weight_path = seed_dir.join("weights").join(format!("{method}.csv"));
    match method {
        Method::Sa => {
            let predictions = run_average_forecaster(matrix, n_train..n)?;
            Ok(MethodRun {
                files: vec![(pred_path, predictions_csv(test_periods, &predictions).into_bytes())],
                predictions,
            })
        }
        Method::Ga => {
            let ga = GaConfig {
                seed: derive_seed(seed, 3),
                ..config.ga.clone()
            };
            let out = run_ga_forecaster(series.values(), matrix, n_train..n, &ga)?;
            let dense: Vec<Vec<f64>> = out
                .weights
                .iter()
                .map(|sparse| {
                    let mut row = vec![0.0; matrix.n_models()];
                    for &(i, w) in sparse {
                        row[i] = w;
                    }
                    row
                })
                .collect();
            Ok(MethodRun {
                files: vec![
                    (pred_path, predictions_csv(test_periods, &out.predictions).into_bytes()),
                    (weight_path, weights_csv(test_periods, &names(matrix), &dense).into_bytes()),
                ],
                predictions: out.predictions,
            })
        }
        Method::Rl | Method::FoodRl => {
            let spec = RlRunSpec {
                test_periods: n - n_train,
                clusters: if method == Method::Rl {
                    ClusterChoice::None
                } else {
                    config.cluster_choice()
                },
                feature_windows: Some(windows.to_vec()),
                ppo: config.ppo.clone(),
                seed,
            };
            let out = run_foodrl(series, matrix, &spec)?;
            let weight_rows: Vec<Vec<f64>> = out.weights.iter().map(|w| w.as_slice().to_vec()).collect();
            let policy_dir = seed_dir.join("policies");
            Ok(MethodRun {
                files: vec![
                    (pred_path, predictions_csv(test_periods, &out.predictions).into_bytes()),
                    (
                        weight_path,
                        weights_csv(test_periods, &out.trained.policy.meta.action_names, &weight_rows).into_bytes(),
                    ),
                    (policy_dir.join(format!("{method}.policy")), out.trained.policy.to_bytes()?),
                    (
                        policy_dir.join(format!("{method}_rewards.csv")),
                        out.trained.reward_curve_csv().into_bytes(),
                    ),
                ],
                predictions: out.predictions,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
methods = ["SA", "GA"]
seeds = [1]

[data]
scenario = "east"
test_periods = 24
"#;

    #[test]
    fn parses_and_validates() {
        let c = ExperimentConfig::from_toml(MINIMAL, Path::new("/tmp")).unwrap();
        c.validate().unwrap();
        assert_eq!(c.methods, vec![Method::Sa, Method::Ga]);
        assert_eq!(c.out, PathBuf::from("/tmp/runs"));
        assert_eq!(c.ppo, PpoConfig::default());
    }

    #[test]
    fn rejects_bad_configs() {
        let no_methods = MINIMAL.replace(r#"["SA", "GA"]"#, "[]");
        let c = ExperimentConfig::from_toml(&no_methods, Path::new(".")).unwrap();
        let e = c.validate().unwrap_err();
        assert_eq!(exit_code(&e), 1);
        assert!(e.to_string().contains("methods"));

        let unknown = MINIMAL.replace(r#""GA""#, r#""XGB""#);
        assert!(ExperimentConfig::from_toml(&unknown, Path::new(".")).is_err());

        let missing = MINIMAL.replace(r#"scenario = "east""#, r#"path = "nope.csv""#);
        let c = ExperimentConfig::from_toml(&missing, Path::new(".")).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_root() {
        let a = ExperimentConfig::from_toml(MINIMAL, Path::new("/a")).unwrap();
        let b = ExperimentConfig::from_toml(MINIMAL, Path::new("/b")).unwrap();
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let mut c = a.clone();
        c.seeds = vec![2];
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("foodrl".parse::<Method>().unwrap(), Method::FoodRl);
    }

    #[test]
    fn predictions_round_trip() {
        let periods = Period::month(2020, 11).unwrap().sequence(3);
        let text = predictions_csv(&periods, &[1.5, 2.0, 1e6]);
        let back = read_predictions_csv(&text, "mem").unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[2], (periods[2], 1e6));
        assert!(read_predictions_csv("period,x\n", "mem").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
