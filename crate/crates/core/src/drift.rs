//! Five-regime concept-drift labelling and per-regime error tables.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cluster::kmeans;
use crate::error::{Error, Result};
use crate::series::DonationSeries;
use crate::stats;

/// Movement regime of a step, ordered from steepest fall to steepest rise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftLabel {
    ExtremeDecline,
    ModerateDecline,
    SlightTrend,
    ModerateIncrease,
    ExtremeIncrease,
}

impl DriftLabel {
    pub const ALL: [DriftLabel; 5] = [
        DriftLabel::ExtremeDecline,
        DriftLabel::ModerateDecline,
        DriftLabel::SlightTrend,
        DriftLabel::ModerateIncrease,
        DriftLabel::ExtremeIncrease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DriftLabel::ExtremeDecline => "extreme_decline",
            DriftLabel::ModerateDecline => "moderate_decline",
            DriftLabel::SlightTrend => "slight_trend",
            DriftLabel::ModerateIncrease => "moderate_increase",
            DriftLabel::ExtremeIncrease => "extreme_increase",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            DriftLabel::ExtremeDecline => "Extreme Decline",
            DriftLabel::ModerateDecline => "Moderate Decline",
            DriftLabel::SlightTrend => "Slight Trend",
            DriftLabel::ModerateIncrease => "Moderate Increase",
            DriftLabel::ExtremeIncrease => "Extreme Increase",
        }
    }

    pub fn is_decline(self) -> bool {
        matches!(self, DriftLabel::ExtremeDecline | DriftLabel::ModerateDecline)
    }
}

impl fmt::Display for DriftLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DriftLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DriftLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regime `{s}`")))
    }
}

/// One-step percent change per step; the first step is 0.
pub fn drift_features(series: &DonationSeries) -> Vec<f64> {
    percent_changes(series.values())
}

pub(crate) fn percent_changes(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    if values.is_empty() {
        return out;
    }
    out.push(0.0);
    out.extend(values.windows(2).map(|w| 100.0 * (w[1] - w[0]) / w[0]));
    out
}

/// K-means restarts used by [`label_descriptors`].
pub const DRIFT_RESTARTS: u64 = 10;

/// Labels 1-D descriptors with 5-means (lowest inertia over [`DRIFT_RESTARTS`]
/// seeded starts), naming clusters by ascending centroid.
pub fn label_descriptors(descriptors: &[f64], seed: u64) -> Result<Vec<DriftLabel>> {
    let mut distinct = descriptors.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 {
        return Err(Error::invalid(format!(
            "drift labelling needs at least 5 distinct descriptors, found {}",
            distinct.len()
        )));
    }
    let points: Vec<Vec<f64>> = descriptors.iter().map(|d| vec![*d]).collect();
    // best of several seeded restarts; one k-means++ start often isolates a lone outlier
    let mut fit = kmeans(&points, 5, seed, 300)?;
    for r in 1..DRIFT_RESTARTS {
        let other = kmeans(&points, 5, stats::derive_seed(seed, r), 300)?;
        if other.inertia < fit.inertia {
            fit = other;
        }
    }
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|a, b| fit.centroids[*a][0].total_cmp(&fit.centroids[*b][0]));
    let mut rank = [0usize; 5];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r;
    }
    Ok(fit.assignment.iter().map(|&c| DriftLabel::ALL[rank[c]]).collect())
}

pub fn label_drift(series: &DonationSeries, seed: u64) -> Result<Vec<DriftLabel>> {
    if series.len() < 5 {
        return Err(Error::invalid(format!("drift labelling needs N >= 5, got {}", series.len())));
    }
    label_descriptors(&drift_features(series), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Per (regime, method) MAPE summaries. Regimes without steps are absent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RegimeReport {
    pub methods: Vec<String>,
    pub rows: BTreeMap<DriftLabel, BTreeMap<String, RegimeStats>>,
}

impl RegimeReport {
    pub fn get(&self, label: DriftLabel, method: &str) -> Option<&RegimeStats> {
        self.rows.get(&label)?.get(method)
    }

    /// Regimes as rows, methods as columns, cells `mean ± std`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("regime");
        for m in &self.methods {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (label, cells) in self.rows.iter().rev() {
            out.push_str(label.as_str());
            for m in &self.methods {
                out.push(',');
                if let Some(s) = cells.get(m) {
                    out.push_str(&format!("{:.2} ± {:.2}", s.mean, s.std));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Regime | Steps |");
        for m in &self.methods {
            out.push_str(&format!(" {m} |"));
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(self.methods.len()));
        out.push('\n');
        for (label, cells) in self.rows.iter().rev() {
            let count = cells.values().next().map_or(0, |s| s.count);
            out.push_str(&format!("| {} | {count} |", label.title()));
            for m in &self.methods {
                match cells.get(m) {
                    Some(s) => out.push_str(&format!(" {:.2} ± {:.2} |", s.mean, s.std)),
                    None => out.push_str(" |"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Groups per-step MAPE by regime label.
pub fn per_regime_report(per_step_mape: &BTreeMap<String, Vec<f64>>, labels: &[DriftLabel]) -> Result<RegimeReport> {
    let mut report = RegimeReport {
        methods: per_step_mape.keys().cloned().collect(),
        rows: BTreeMap::new(),
    };
    for (method, series) in per_step_mape {
        if series.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: labels.len(),
                actual: series.len(),
            });
        }
        for label in DriftLabel::ALL {
            let values: Vec<f64> = series
                .iter()
                .zip(labels)
                .filter_map(|(v, l)| (*l == label).then_some(*v))
                .collect();
            if values.is_empty() {
                continue;
            }
            report.rows.entry(label).or_default().insert(
                method.clone(),
                RegimeStats {
                    mean: stats::mean(&values),
                    std: stats::std_pop(&values),
                    count: values.len(),
                },
            );
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Period;

    fn series(values: &[f64]) -> DonationSeries {
        DonationSeries::from_start(Period::month(2015, 1).unwrap(), values.to_vec()).unwrap()
    }

    #[test]
    fn percent_change_descriptors() {
        assert_eq!(drift_features(&series(&[100.0, 110.0]))[1], 10.0);
        assert_eq!(drift_features(&series(&[100.0, 100.0]))[1], 0.0);
        assert_eq!(drift_features(&series(&[100.0, 50.0])), vec![0.0, -50.0]);
    }

    #[test]
    fn five_singletons_in_order() {
        let labels = label_descriptors(&[10.0, -50.0, 50.0, 0.0, -10.0], 3).unwrap();
        assert_eq!(
            labels,
            vec![
                DriftLabel::ModerateIncrease,
                DriftLabel::ExtremeDecline,
                DriftLabel::ExtremeIncrease,
                DriftLabel::SlightTrend,
                DriftLabel::ModerateDecline,
            ]
        );
    }

    #[test]
    fn constant_series_rejected() {
        let err = label_drift(&series(&[5.0; 12]), 1).unwrap_err();
        assert!(err.to_string().contains("found 1"), "{err}");
    }

    #[test]
    fn labels_follow_centroid_order() {
        let values: Vec<f64> = (0..80).map(|i| 100.0 + 30.0 * (i as f64 * 0.9).sin() + (i % 7) as f64).collect();
        let s = series(&values);
        for seed in 0..5 {
            let labels = label_drift(&s, seed).unwrap();
            let d = drift_features(&s);
            let mut means = Vec::new();
            for label in DriftLabel::ALL {
                let v: Vec<f64> = d.iter().zip(&labels).filter(|(_, l)| **l == label).map(|(x, _)| *x).collect();
                means.push(stats::mean(&v));
            }
            assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
        }
    }

    #[test]
    fn grouped_means() {
        use DriftLabel::*;
        let mut m = BTreeMap::new();
        m.insert("SA".to_string(), vec![10.0, 20.0, 30.0]);
        let r = per_regime_report(&m, &[SlightTrend, SlightTrend, ExtremeIncrease]).unwrap();
        assert_eq!(r.get(SlightTrend, "SA").unwrap().mean, 15.0);
        assert_eq!(r.get(ExtremeIncrease, "SA").unwrap().mean, 30.0);
        assert!(r.get(ModerateDecline, "SA").is_none());
        assert!(!r.rows.contains_key(&ModerateDecline));

        m.insert("GA".to_string(), vec![10.0, 20.0, 30.0]);
        let r = per_regime_report(&m, &[SlightTrend, SlightTrend, ExtremeIncrease]).unwrap();
        assert_eq!(r.get(SlightTrend, "SA"), r.get(SlightTrend, "GA"));

        assert!(per_regime_report(&m, &[SlightTrend]).is_err());
    }
}
