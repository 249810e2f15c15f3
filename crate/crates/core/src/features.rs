//! Rolling-window statistics over strictly past observations.
//!
//! For each window `w` six statistics are computed over the trailing
//! `min(w, len)` values: mean, max, population std, least-squares slope,
//! mean of consecutive differences and median of consecutive differences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DonationSeries, Frequency, Period};
use crate::stats;

pub const STAT_NAMES: [&str; 6] = ["mean", "max", "std", "slope", "mean_diff", "median_diff"];

/// Default rolling windows for a frequency.
pub fn default_windows(frequency: Frequency) -> Vec<usize> {
    match frequency {
        Frequency::Monthly => vec![2, 4, 6, 12],
        Frequency::Weekly => vec![2, 6, 12, 26, 38, 52],
    }
}

pub fn feature_names(windows: &[usize]) -> Vec<String> {
    windows
        .iter()
        .flat_map(|w| STAT_NAMES.iter().map(move |s| format!("{s}_w{w}")))
        .collect()
}

/// Features of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub period: Option<Period>,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    pub windows: Vec<usize>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }
}

fn slope(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = stats::mean(xs);
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in xs.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}

fn window_stats(xs: &[f64], out: &mut Vec<f64>) {
    if xs.is_empty() {
        out.extend([0.0; 6]);
        return;
    }
    let diffs: Vec<f64> = xs.windows(2).map(|p| p[1] - p[0]).collect();
    out.push(stats::mean(xs));
    out.push(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    out.push(stats::std_pop(xs));
    out.push(slope(xs));
    out.push(stats::mean(&diffs));
    out.push(stats::median(&diffs));
}

fn raw_features(history: &[f64], windows: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(windows.len() * STAT_NAMES.len());
    for &w in windows {
        let start = history.len().saturating_sub(w);
        window_stats(&history[start..], &mut out);
    }
    out
}

/// Statistics over the tail of `history`; an empty history yields all zeros.
pub fn extract_features(history: &[f64], windows: &[usize]) -> FeatureVector {
    FeatureVector {
        period: None,
        names: feature_names(windows),
        values: raw_features(history, windows),
        windows: windows.to_vec(),
    }
}

/// Feature rows for every step of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub windows: Vec<usize>,
    pub periods: Vec<Period>,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureTable {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn vector(&self, step: usize) -> FeatureVector {
        FeatureVector {
            period: Some(self.periods[step]),
            names: self.names.clone(),
            values: self.rows[step].clone(),
            windows: self.windows.clone(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("period");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (p, row) in self.periods.iter().zip(&self.rows) {
            out.push_str(&p.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

/// Row `t` is computed from values `[t - w, t - 1]` only.
pub fn build_feature_table(series: &DonationSeries, windows: &[usize]) -> Result<FeatureTable> {
    if windows.is_empty() || windows.contains(&0) {
        return Err(Error::invalid("feature windows must be non-empty and positive"));
    }
    let values = series.values();
    let rows = (0..values.len()).map(|t| raw_features(&values[..t], windows)).collect();
    Ok(FeatureTable {
        names: feature_names(windows),
        windows: windows.to_vec(),
        periods: series.periods().to_vec(),
        rows,
    })
}

/// Z-score transform fitted on a prefix of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Fits on `rows`; zero-variance columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::invalid("cannot standardize zero rows"))?;
        let dim = first.len();
        let mut means = vec![0.0; dim];
        let mut scales = vec![1.0; dim];
        let mut column = Vec::with_capacity(rows.len());
        for j in 0..dim {
            column.clear();
            column.extend(rows.iter().map(|r| r[j]));
            means[j] = stats::mean(&column);
            let sd = stats::std_pop(&column);
            if sd > 1e-12 * means[j].abs().max(1.0) {
                scales[j] = sd;
            }
        }
        Ok(Self { means, scales })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.scales))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}
