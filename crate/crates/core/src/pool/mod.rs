//! Base-learner pool: model specs, one-step fits and the forecast matrix.

pub mod models;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::series::{DonationSeries, Frequency, Period};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelType {
    MovingAverage,
    Autoregressive,
    SesPlain,
    HoltWintersPlus,
    DampedTrend,
    SeasonalNaive,
}

impl ModelType {
    pub const ALL: [ModelType; 6] = [
        ModelType::MovingAverage,
        ModelType::Autoregressive,
        ModelType::SesPlain,
        ModelType::HoltWintersPlus,
        ModelType::DampedTrend,
        ModelType::SeasonalNaive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelType::MovingAverage => "moving_average",
            ModelType::Autoregressive => "autoregressive",
            ModelType::SesPlain => "ses_plain",
            ModelType::HoltWintersPlus => "holt_winters_plus",
            ModelType::DampedTrend => "damped_trend",
            ModelType::SeasonalNaive => "seasonal_naive",
        }
    }

    /// Shortest training window the model can be fit on.
    pub fn min_history(self, settings: &ModelSettings) -> usize {
        match self {
            ModelType::MovingAverage => 1,
            ModelType::Autoregressive => 2 * settings.ar_order + 2,
            ModelType::SesPlain => 2,
            ModelType::HoltWintersPlus => 2 * settings.season_length,
            ModelType::DampedTrend => 4,
            ModelType::SeasonalNaive => settings.season_length,
        }
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model type `{s}`")))
    }
}

/// Number of trailing periods a learner trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TrainLength {
    Periods(usize),
    All,
}

impl fmt::Display for TrainLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainLength::Periods(n) => write!(f, "{n}"),
            TrainLength::All => f.write_str("all"),
        }
    }
}

impl FromStr for TrainLength {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(TrainLength::All);
        }
        match s.parse::<usize>() {
            Ok(n) if n > 0 => Ok(TrainLength::Periods(n)),
            _ => Err(Error::invalid(format!("train length `{s}` is neither a positive count nor `all`"))),
        }
    }
}

impl Serialize for TrainLength {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TrainLength::Periods(n) => serializer.serialize_u64(*n as u64),
            TrainLength::All => serializer.serialize_str("all"),
        }
    }
}

impl<'de> Deserialize<'de> for TrainLength {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(n) if n > 0 => Ok(TrainLength::Periods(n as usize)),
            Raw::Count(_) => Err(serde::de::Error::custom("train length must be positive")),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStrategy {
    Expanding,
    Sliding,
}

impl WindowStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowStrategy::Expanding => "expanding",
            WindowStrategy::Sliding => "sliding",
        }
    }
}

impl FromStr for WindowStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expanding" => Ok(WindowStrategy::Expanding),
            "sliding" => Ok(WindowStrategy::Sliding),
            _ => Err(Error::invalid(format!("unknown window strategy `{s}`"))),
        }
    }
}

/// Frequency-dependent model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub season_length: usize,
    pub ar_order: usize,
}

impl ModelSettings {
    pub fn for_frequency(frequency: Frequency) -> Self {
        match frequency {
            Frequency::Monthly => Self {
                season_length: 12,
                ar_order: 3,
            },
            Frequency::Weekly => Self {
                season_length: 52,
                ar_order: 4,
            },
        }
    }
}

/// One base learner: a model type trained on a given window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_type: ModelType,
    pub train_length: TrainLength,
    pub window_strategy: WindowStrategy,
}

impl ModelSpec {
    pub fn new(model_type: ModelType, train_length: TrainLength, window_strategy: WindowStrategy) -> Self {
        Self {
            model_type,
            train_length,
            window_strategy,
        }
    }

    /// Column name, `type_len_strategy`.
    pub fn name(&self) -> String {
        format!(
            "{}_{}_{}",
            self.model_type.as_str(),
            self.train_length,
            self.window_strategy.as_str()
        )
    }

    /// History length at which the learner starts producing forecasts.
    pub fn min_history(&self, settings: &ModelSettings) -> usize {
        let type_min = self.model_type.min_history(settings);
        match self.train_length {
            TrainLength::Periods(n) => n.max(type_min),
            TrainLength::All => type_min,
        }
    }

    /// Training window for a given history under this spec's strategy.
    pub fn training_window<'a>(&self, history: &'a [f64]) -> &'a [f64] {
        match (self.window_strategy, self.train_length) {
            (WindowStrategy::Sliding, TrainLength::Periods(n)) => &history[history.len().saturating_sub(n)..],
            _ => history,
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("`{s}` is not a `type_len_strategy` spec name"));
        let (rest, strategy) = s.rsplit_once('_').ok_or_else(bad)?;
        let (model_type, length) = rest.rsplit_once('_').ok_or_else(bad)?;
        Ok(ModelSpec::new(model_type.parse()?, length.parse()?, strategy.parse()?))
    }
}

/// Cross-product description of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub model_types: Vec<ModelType>,
    pub train_lengths: Vec<TrainLength>,
    pub window_strategies: Vec<WindowStrategy>,
    pub settings: ModelSettings,
}

impl PoolConfig {
    /// All six model types, both strategies, and the default lengths for the frequency.
    pub fn for_frequency(frequency: Frequency) -> Self {
        let lengths: &[usize] = match frequency {
            Frequency::Monthly => &[12, 18, 24, 36, 48, 60],
            Frequency::Weekly => &[26, 52, 78, 104],
        };
        let mut train_lengths: Vec<TrainLength> = lengths.iter().map(|&n| TrainLength::Periods(n)).collect();
        train_lengths.push(TrainLength::All);
        Self {
            model_types: ModelType::ALL.to_vec(),
            train_lengths,
            window_strategies: vec![WindowStrategy::Expanding, WindowStrategy::Sliding],
            settings: ModelSettings::for_frequency(frequency),
        }
    }
}

/// Full cross product of the config minus combinations below a model's minimum history.
///
/// Order is model type, then train length, then strategy, each in config order.
pub fn enumerate_specs(config: &PoolConfig) -> Result<Vec<ModelSpec>> {
    let mut specs = Vec::new();
    for &model_type in &config.model_types {
        let type_min = model_type.min_history(&config.settings);
        for &train_length in &config.train_lengths {
            if matches!(train_length, TrainLength::Periods(n) if n < type_min) {
                continue;
            }
            for &window_strategy in &config.window_strategies {
                let spec = ModelSpec::new(model_type, train_length, window_strategy);
                if !specs.contains(&spec) {
                    specs.push(spec);
                }
            }
        }
    }
    if specs.is_empty() {
        return Err(Error::invalid("pool configuration produces no model specs"));
    }
    Ok(specs)
}

/// One-step-ahead forecast from `history` (everything strictly before the target).
///
/// Returns `None` when the history is shorter than the model's minimum history.
pub fn fit_predict_one_step(spec: &ModelSpec, history: &[f64], settings: &ModelSettings) -> Option<f64> {
    if history.len() < spec.min_history(settings) || history.is_empty() {
        return None;
    }
    let window = spec.training_window(history);
    let raw = match spec.model_type {
        ModelType::MovingAverage => models::moving_average(window),
        ModelType::Autoregressive => models::autoregressive(window, settings.ar_order),
        ModelType::SesPlain => models::ses(window),
        ModelType::HoltWintersPlus => models::holt_winters_additive(window, settings.season_length),
        ModelType::DampedTrend => models::damped_trend(window),
        ModelType::SeasonalNaive => models::seasonal_naive(window, settings.season_length),
    };
    let value = if raw.is_finite() { raw } else { window[window.len() - 1] };
    Some(value.max(0.0))
}

/// Per-step predictions of every learner; `None` marks an unavailable entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastMatrix {
    specs: Vec<ModelSpec>,
    periods: Vec<Period>,
    /// Row-major: `entries[step][spec]`.
    entries: Vec<Vec<Option<f64>>>,
}

impl ForecastMatrix {
    pub fn new(specs: Vec<ModelSpec>, periods: Vec<Period>, entries: Vec<Vec<Option<f64>>>) -> Result<Self> {
        if entries.len() != periods.len() {
            return Err(Error::LengthMismatch {
                expected: periods.len(),
                actual: entries.len(),
            });
        }
        for row in &entries {
            if row.len() != specs.len() {
                return Err(Error::LengthMismatch {
                    expected: specs.len(),
                    actual: row.len(),
                });
            }
            if row.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::validation("forecast entries must be finite and >= 0"));
            }
        }
        Ok(Self { specs, periods, entries })
    }

    pub fn specs(&self) -> &[ModelSpec] {
        &self.specs
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.entries
    }

    pub fn row(&self, step: usize) -> &[Option<f64>] {
        &self.entries[step]
    }

    pub fn n_steps(&self) -> usize {
        self.periods.len()
    }

    pub fn n_models(&self) -> usize {
        self.specs.len()
    }

    /// Number of available predictions at a step.
    pub fn available_count(&self, step: usize) -> usize {
        self.entries[step].iter().filter(|e| e.is_some()).count()
    }

    /// Available predictions at a step, in column order.
    pub fn available(&self, step: usize) -> Vec<f64> {
        self.entries[step].iter().flatten().copied().collect()
    }

    /// Rows `[0, end)`.
    pub fn head(&self, end: usize) -> Self {
        Self {
            specs: self.specs.clone(),
            periods: self.periods[..end].to_vec(),
            entries: self.entries[..end].to_vec(),
        }
    }

    /// CSV with a `period` column and one column per spec; empty cell = unavailable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period");
        for spec in &self.specs {
            out.push(',');
            out.push_str(&spec.name());
        }
        out.push('\n');
        for (period, row) in self.periods.iter().zip(&self.entries) {
            out.push_str(&period.to_string());
            for cell in row {
                out.push(',');
                if let Some(v) = cell {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, origin: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(text.as_bytes());
        let parse_err = |line: u64, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
        if headers.get(0) != Some("period") {
            return Err(parse_err(1, "first column must be `period`".into()));
        }
        let specs = headers
            .iter()
            .skip(1)
            .map(|h| h.parse::<ModelSpec>())
            .collect::<Result<Vec<_>>>()
            .map_err(|e| parse_err(1, e.to_string()))?;
        let mut periods = Vec::new();
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let period: Period = record[0].parse().map_err(|e: Error| parse_err(line, e.to_string()))?;
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|_| parse_err(line, format!("`{cell}` is not a number")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            periods.push(period);
            entries.push(row);
        }
        Self::new(specs, periods, entries)
    }
}

/// Runs every learner at every step on the history strictly before that step.
///
/// Columns are computed in parallel; each cell depends only on its own
/// (spec, history) pair, so the result is independent of scheduling.
pub fn build_forecast_matrix(series: &DonationSeries, specs: &[ModelSpec], settings: &ModelSettings) -> Result<ForecastMatrix> {
    if specs.is_empty() {
        return Err(Error::invalid("no model specs supplied"));
    }
    let values = series.values();
    let columns: Vec<Vec<Option<f64>>> = specs
        .par_iter()
        .map(|spec| {
            (0..values.len())
                .map(|t| fit_predict_one_step(spec, &values[..t], settings))
                .collect()
        })
        .collect();
    let entries = (0..values.len())
        .map(|t| columns.iter().map(|col| col[t]).collect())
        .collect();
    ForecastMatrix::new(specs.to_vec(), series.periods().to_vec(), entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> ModelSettings {
        ModelSettings::for_frequency(Frequency::Monthly)
    }

    #[test]
    fn cross_product_count() {
        let config = PoolConfig {
            model_types: ModelType::ALL.to_vec(),
            train_lengths: [24, 30, 36, 42, 48, 54, 60].map(TrainLength::Periods).to_vec(),
            window_strategies: vec![WindowStrategy::Expanding, WindowStrategy::Sliding],
            settings: settings(),
        };
        let specs = enumerate_specs(&config).unwrap();
        assert_eq!(specs.len(), 84);
        assert_eq!(specs[0].name(), "moving_average_24_expanding");
        assert_eq!(specs[1].name(), "moving_average_24_sliding");
    }

    #[test]
    fn singleton_pool() {
        let config = PoolConfig {
            model_types: vec![ModelType::SesPlain],
            train_lengths: vec![TrainLength::All],
            window_strategies: vec![WindowStrategy::Expanding],
            settings: settings(),
        };
        assert_eq!(enumerate_specs(&config).unwrap().len(), 1);
    }

    #[test]
    fn holt_winters_below_two_cycles_excluded() {
        let config = PoolConfig {
            model_types: vec![ModelType::HoltWintersPlus, ModelType::MovingAverage],
            train_lengths: vec![TrainLength::Periods(6)],
            window_strategies: vec![WindowStrategy::Sliding],
            settings: settings(),
        };
        let specs = enumerate_specs(&config).unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].model_type, ModelType::MovingAverage);
    }

    #[test]
    fn empty_pool_errors() {
        let config = PoolConfig {
            model_types: vec![ModelType::HoltWintersPlus],
            train_lengths: vec![TrainLength::Periods(6)],
            window_strategies: vec![WindowStrategy::Sliding],
            settings: settings(),
        };
        assert!(enumerate_specs(&config).is_err());
    }

    #[test]
    fn default_monthly_pool_drops_short_holt_winters() {
        let specs = enumerate_specs(&PoolConfig::for_frequency(Frequency::Monthly)).unwrap();
        assert_eq!(specs.len(), 6 * 7 * 2 - 4);
    }

    #[test]
    fn spec_name_round_trip() {
        for spec in enumerate_specs(&PoolConfig::for_frequency(Frequency::Weekly)).unwrap() {
            assert_eq!(spec.name().parse::<ModelSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn moving_average_window_three() {
        let spec = ModelSpec::new(ModelType::MovingAverage, TrainLength::Periods(3), WindowStrategy::Sliding);
        assert_eq!(fit_predict_one_step(&spec, &[10.0, 20.0, 30.0], &settings()), Some(20.0));
        assert_eq!(fit_predict_one_step(&spec, &[10.0, 20.0], &settings()), None);
    }

    #[test]
    fn seasonal_naive_lag_twelve() {
        let spec = ModelSpec::new(ModelType::SeasonalNaive, TrainLength::All, WindowStrategy::Expanding);
        let history: Vec<f64> = (1..=13).map(|v| v as f64 * 10.0).collect();
        assert_eq!(fit_predict_one_step(&spec, &history, &settings()), Some(20.0));
    }

    #[test]
    fn negative_extrapolation_clamped() {
        let spec = ModelSpec::new(ModelType::DampedTrend, TrainLength::All, WindowStrategy::Expanding);
        let history = [1000.0, 700.0, 400.0, 100.0, 1.0];
        assert_eq!(fit_predict_one_step(&spec, &history, &settings()), Some(0.0));
    }

    #[test]
    fn availability_rule() {
        let series = DonationSeries::from_start(Period::month(2020, 1).unwrap(), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let spec = ModelSpec::new(ModelType::MovingAverage, TrainLength::Periods(2), WindowStrategy::Sliding);
        let m = build_forecast_matrix(&series, &[spec], &settings()).unwrap();
        let col: Vec<Option<f64>> = m.rows().iter().map(|r| r[0]).collect();
        assert_eq!(col, vec![None, None, Some(1.5), Some(2.5), Some(3.5)]);
    }

    #[test]
    fn matrix_csv_round_trip() {
        let values: Vec<f64> = (0..30).map(|i| 100.0 + (i as f64 * 0.7).sin() * 10.0).collect();
        let series = DonationSeries::from_start(Period::month(2019, 3).unwrap(), values).unwrap();
        let specs = enumerate_specs(&PoolConfig {
            model_types: vec![ModelType::MovingAverage, ModelType::Autoregressive],
            train_lengths: vec![TrainLength::Periods(12), TrainLength::All],
            window_strategies: vec![WindowStrategy::Sliding],
            settings: settings(),
        })
        .unwrap();
        let m = build_forecast_matrix(&series, &specs, &settings()).unwrap();
        assert_eq!(ForecastMatrix::from_csv(&m.to_csv(), "mem").unwrap(), m);
    }
}
