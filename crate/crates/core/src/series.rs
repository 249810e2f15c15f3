//! Donation series containers, period identifiers and positional splitting.
//!
//! A series is dense: periods are strictly consecutive at the declared
//! frequency, and every volume is a finite positive number of pounds.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::drift::DriftLabel;
use crate::error::{Error, Result};

/// Sampling cadence of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frequency {
    Weekly,
    Monthly,
}

impl Frequency {
    pub fn periods_per_year(self) -> usize {
        match self {
            Frequency::Weekly => 52,
            Frequency::Monthly => 12,
        }
    }

    /// Length of one seasonal cycle in periods.
    pub fn season_length(self) -> usize {
        self.periods_per_year()
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::Weekly => "weekly",
            Frequency::Monthly => "monthly",
        })
    }
}

impl FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "weekly" | "week" | "w" => Ok(Frequency::Weekly),
            "monthly" | "month" | "m" => Ok(Frequency::Monthly),
            other => Err(Error::invalid(format!("unknown frequency `{other}`"))),
        }
    }
}

/// A calendar period: `YYYY-MM` for months, `YYYY-Www` for ISO weeks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Period {
    Month { year: i32, month: u32 },
    Week { year: i32, week: u32 },
}

fn iso_weeks_in_year(year: i32) -> u32 {
    // Dec 28 always falls in the last ISO week of its year.
    NaiveDate::from_ymd_opt(year, 12, 28)
        .map(|d| d.iso_week().week())
        .unwrap_or(52)
}

impl Period {
    pub fn month(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::invalid(format!("month {month} out of range")));
        }
        Ok(Period::Month { year, month })
    }

    pub fn week(year: i32, week: u32) -> Result<Self> {
        if week == 0 || week > iso_weeks_in_year(year) {
            return Err(Error::invalid(format!("ISO week {week} does not exist in {year}")));
        }
        Ok(Period::Week { year, week })
    }

    pub fn frequency(&self) -> Frequency {
        match self {
            Period::Month { .. } => Frequency::Monthly,
            Period::Week { .. } => Frequency::Weekly,
        }
    }

    /// The period immediately following this one.
    pub fn next(&self) -> Period {
        match *self {
            Period::Month { year, month } if month == 12 => Period::Month {
                year: year + 1,
                month: 1,
            },
            Period::Month { year, month } => Period::Month {
                year,
                month: month + 1,
            },
            Period::Week { year, week } if week >= iso_weeks_in_year(year) => Period::Week {
                year: year + 1,
                week: 1,
            },
            Period::Week { year, week } => Period::Week {
                year,
                week: week + 1,
            },
        }
    }

    /// `count` consecutive periods starting at `self`.
    pub fn sequence(&self, count: usize) -> Vec<Period> {
        let mut out = Vec::with_capacity(count);
        let mut current = *self;
        for _ in 0..count {
            out.push(current);
            current = current.next();
        }
        out
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Month { year, month } => write!(f, "{year:04}-{month:02}"),
            Period::Week { year, week } => write!(f, "{year:04}-W{week:02}"),
        }
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (year, rest) = s
            .split_once('-')
            .ok_or_else(|| Error::invalid(format!("period `{s}` is not YYYY-MM or YYYY-Www")))?;
        let year: i32 = year
            .parse()
            .map_err(|_| Error::invalid(format!("bad year in period `{s}`")))?;
        if let Some(week) = rest.strip_prefix(['W', 'w']) {
            let week: u32 = week
                .parse()
                .map_err(|_| Error::invalid(format!("bad week in period `{s}`")))?;
            Period::week(year, week)
        } else {
            let month: u32 = rest
                .parse()
                .map_err(|_| Error::invalid(format!("bad month in period `{s}`")))?;
            Period::month(year, month)
        }
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dense univariate donation series in pounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonationSeries {
    frequency: Frequency,
    periods: Vec<Period>,
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    regime_truth: Option<Vec<DriftLabel>>,
}

impl DonationSeries {
    /// Validates and builds a series.
    pub fn new(frequency: Frequency, periods: Vec<Period>, values: Vec<f64>) -> Result<Self> {
        if periods.len() != values.len() {
            return Err(Error::LengthMismatch {
                expected: periods.len(),
                actual: values.len(),
            });
        }
        if periods.is_empty() {
            return Err(Error::validation("series is empty"));
        }
        for (i, p) in periods.iter().enumerate() {
            if p.frequency() != frequency {
                return Err(Error::validation(format!(
                    "period {p} does not match declared {frequency} frequency"
                )));
            }
            if i > 0 && periods[i - 1].next() != *p {
                return Err(Error::validation(format!(
                    "gap or disorder between {} and {p}",
                    periods[i - 1]
                )));
            }
        }
        for (p, v) in periods.iter().zip(&values) {
            if !v.is_finite() || *v <= 0.0 {
                return Err(Error::validation(format!(
                    "value at {p} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(Self {
            frequency,
            periods,
            values,
            regime_truth: None,
        })
    }

    /// Builds a series of consecutive periods beginning at `start`.
    pub fn from_start(start: Period, values: Vec<f64>) -> Result<Self> {
        let periods = start.sequence(values.len());
        Self::new(start.frequency(), periods, values)
    }

    pub fn with_regime_truth(mut self, labels: Vec<DriftLabel>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: labels.len(),
            });
        }
        self.regime_truth = Some(labels);
        Ok(self)
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn regime_truth(&self) -> Option<&[DriftLabel]> {
        self.regime_truth.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copy of the series with `values` swapped in; periods and truth labels are kept.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(self.frequency, self.periods.clone(), values)?;
        out.regime_truth = self.regime_truth.clone();
        Ok(out)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            frequency: self.frequency,
            periods: self.periods[range.clone()].to_vec(),
            values: self.values[range.clone()].to_vec(),
            regime_truth: self.regime_truth.as_ref().map(|r| r[range].to_vec()),
        }
    }

    /// Serializes as `period,pounds` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,pounds\n");
        for (p, v) in self.periods.iter().zip(&self.values) {
            out.push_str(&format!("{p},{v}\n"));
        }
        out
    }

    /// Serializes the ground-truth regimes as `period,regime` CSV, if present.
    pub fn regimes_csv(&self) -> Option<String> {
        let labels = self.regime_truth.as_ref()?;
        Some(labels_csv(&self.periods, labels))
    }
}

/// `period,regime` rows.
pub fn labels_csv(periods: &[Period], labels: &[DriftLabel]) -> String {
    let mut out = String::from("period,regime\n");
    for (p, l) in periods.iter().zip(labels) {
        out.push_str(&format!("{p},{l}\n"));
    }
    out
}

/// Positional train/test partition of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesSplit {
    pub train: DonationSeries,
    pub test: DonationSeries,
    /// Index of the first test step in the original series.
    pub split_index: usize,
}

/// Holds out the final `test_periods` observations.
pub fn split_train_test(series: &DonationSeries, test_periods: usize) -> Result<SeriesSplit> {
    let n = series.len();
    if test_periods == 0 || test_periods >= n {
        return Err(Error::invalid(format!(
            "test_periods must satisfy 0 < test_periods < {n}, got {test_periods}"
        )));
    }
    let split_index = n - test_periods;
    Ok(SeriesSplit {
        train: series.slice(0..split_index),
        test: series.slice(split_index..n),
        split_index,
    })
}

/// Signed one-step error, prediction minus actual.
pub fn forecast_error(prediction: f64, actual: f64) -> f64 {
    debug_assert!(actual > 0.0, "actual volume must be positive");
    prediction - actual
}

/// Parses `period,pounds` CSV text; `origin` names the source in errors.
pub fn parse_series_csv(text: &str, frequency: Frequency, origin: &str) -> Result<DonationSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Parse {
        path: origin.to_string(),
        line: 1,
        message: e.to_string(),
    })?;
    if headers.len() != 2 || &headers[0] != "period" || &headers[1] != "pounds" {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            message: format!("expected header `period,pounds`, found `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows: Vec<(Period, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: origin.to_string(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let parse_err = |message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        if record.len() != 2 {
            return Err(parse_err(format!("expected 2 fields, found {}", record.len())));
        }
        let period: Period = record[0].parse().map_err(|e: Error| parse_err(e.to_string()))?;
        let value: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(format!("`{}` is not a number", &record[1])))?;
        rows.push((period, value));
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let (periods, values) = rows.into_iter().unzip();
    DonationSeries::new(frequency, periods, values)
}

/// Reads and validates a `period,pounds` CSV file.
pub fn load_series(path: impl AsRef<Path>, frequency: Frequency) -> Result<DonationSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_series_csv(&text, frequency, &path.display().to_string())
}

pub fn write_series(series: &DonationSeries, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(series.to_csv().as_bytes())
        .map_err(|e| Error::io(path, e))
}
