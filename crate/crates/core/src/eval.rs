//! Error metrics, the paired Wilcoxon signed-rank test, meals conversion and
//! consolidated reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::drift::{per_regime_report, DriftLabel, RegimeReport};
use crate::error::{Error, Result};
use crate::series::Period;
use crate::stats;

/// Pounds of food per meal (Feeding America conversion).
pub const POUNDS_PER_MEAL: f64 = 1.2;

fn check_pair(predictions: &[f64], actuals: &[f64]) -> Result<()> {
    if predictions.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            expected: actuals.len(),
            actual: predictions.len(),
        });
    }
    if actuals.is_empty() {
        return Err(Error::invalid("metrics need at least one step"));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair(predictions, actuals)?;
    let total: f64 = predictions.iter().zip(actuals).map(|(p, a)| (p - a).abs()).sum();
    Ok(total / actuals.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    check_pair(predictions, actuals)?;
    if let Some(a) = actuals.iter().find(|a| **a <= 0.0 || !a.is_finite()) {
        return Err(Error::invalid(format!("MAPE needs positive actuals, got {a}")));
    }
    let total: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(p, a)| (p - a).abs() / a * 100.0)
        .sum();
    Ok(total / actuals.len() as f64)
}

pub fn meals_equivalent(pounds: f64) -> f64 {
    pounds / POUNDS_PER_MEAL
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// min(T+, T-).
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Largest n for which the exact null distribution is enumerated.
pub const WILCOXON_EXACT_MAX_N: usize = 20;

/// Midranks of the absolute values (1-based).
fn midranks(abs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|a, b| abs[*a].total_cmp(&abs[*b]));
    let mut ranks = vec![0.0; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided exact p-value: counts sign assignments with T+ <= `w`.
///
/// Works on doubled ranks so midranks stay integral.
fn exact_p(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let tail: f64 = counts[..=limit.min(total)].iter().sum();
    let all = 2f64.powi(ranks.len() as i32);
    (2.0 * tail / all).min(1.0)
}

/// Normal approximation with tie and continuity corrections.
fn normal_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::standard();
    (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
}

fn signed_rank_parts(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.len() < 5 {
        return Err(Error::TooFewDifferences(diffs.len()));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = midranks(&abs);
    let plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let minus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).map(|(_, r)| r).sum();
    Ok((ranks, plus, minus))
}

/// Paired two-sided signed-rank test; zero differences are dropped.
///
/// Exact for up to [`WILCOXON_EXACT_MAX_N`] nonzero pairs, normal
/// approximation above that.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let (ranks, plus, minus) = signed_rank_parts(a, b)?;
    let w = plus.min(minus);
    let exact = ranks.len() <= WILCOXON_EXACT_MAX_N;
    let p_value = if exact { exact_p(&ranks, w) } else { normal_p(&ranks, w) };
    Ok(WilcoxonResult {
        statistic: w,
        p_value,
        n: ranks.len(),
        exact,
    })
}

/// Normal-approximation p-value regardless of n; exposed to cross-check the exact path.
pub fn wilcoxon_normal_approx(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    let (ranks, plus, minus) = signed_rank_parts(a, b)?;
    let w = plus.min(minus);
    Ok(WilcoxonResult {
        statistic: w,
        p_value: normal_p(&ranks, w),
        n: ranks.len(),
        exact: false,
    })
}

/// Annualized meals gained by `method_mae` over `reference_mae`.
pub fn annualized_meals(reference_mae: f64, method_mae: f64, periods_per_year: usize) -> f64 {
    meals_equivalent((reference_mae - method_mae) * periods_per_year as f64)
}

/// Per-method predictions over the evaluated steps, one vector per seed.
#[derive(Debug, Clone, Default)]
pub struct RunResults {
    pub periods: Vec<Period>,
    pub actuals: Vec<f64>,
    pub labels: Option<Vec<DriftLabel>>,
    pub truth_labels: Option<Vec<DriftLabel>>,
    pub methods: BTreeMap<String, Vec<Vec<f64>>>,
    pub periods_per_year: usize,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub seeds: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mape_mean: f64,
    pub mape_std: f64,
    /// Seed-averaged absolute error per step.
    pub per_step_ae: Vec<f64>,
    /// Seed-averaged absolute percentage error per step.
    pub per_step_ape: Vec<f64>,
    /// Mean MAPE of each seed.
    pub seed_mape: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub exact: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodFailure {
    pub method: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub periods: Vec<Period>,
    pub actuals: Vec<f64>,
    pub methods: BTreeMap<String, MethodSummary>,
    pub pairwise: Vec<PairwiseTest>,
    pub regime: RegimeReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime_truth: Option<RegimeReport>,
    pub reference: String,
    /// Annualized meals gained relative to the reference method.
    pub meals_vs_reference: BTreeMap<String, f64>,
    #[serde(default)]
    pub failures: Vec<MethodFailure>,
}

pub fn summarize(run: &RunResults) -> Result<EvalReport> {
    let n = run.actuals.len();
    if run.periods.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: run.periods.len(),
        });
    }
    let mut methods = BTreeMap::new();
    for (name, seeds) in &run.methods {
        if seeds.is_empty() {
            return Err(Error::invalid(format!("method {name} has no seed results")));
        }
        let mut all_ae = Vec::with_capacity(n * seeds.len());
        let mut all_ape = Vec::with_capacity(n * seeds.len());
        let mut per_step_ae = vec![0.0; n];
        let mut per_step_ape = vec![0.0; n];
        let mut seed_mape = Vec::with_capacity(seeds.len());
        for preds in seeds {
            if preds.len() != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    actual: preds.len(),
                });
            }
            seed_mape.push(mape(preds, &run.actuals)?);
            for t in 0..n {
                let ae = mae(&preds[t..=t], &run.actuals[t..=t])?;
                let ape = mape(&preds[t..=t], &run.actuals[t..=t])?;
                all_ae.push(ae);
                all_ape.push(ape);
                per_step_ae[t] += ae / seeds.len() as f64;
                per_step_ape[t] += ape / seeds.len() as f64;
            }
        }
        methods.insert(
            name.clone(),
            MethodSummary {
                seeds: seeds.len(),
                mae_mean: stats::mean(&all_ae),
                mae_std: stats::std_pop(&all_ae),
                mape_mean: stats::mean(&all_ape),
                mape_std: stats::std_pop(&all_ape),
                per_step_ae,
                per_step_ape,
                seed_mape,
            },
        );
    }

    let names: Vec<&String> = methods.keys().collect();
    let mut pairwise = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let (a, b) = (&methods[names[i]], &methods[names[j]]);
            let test = match wilcoxon_signed_rank(&a.per_step_ape, &b.per_step_ape) {
                Ok(r) => PairwiseTest {
                    a: names[i].clone(),
                    b: names[j].clone(),
                    statistic: Some(r.statistic),
                    p_value: Some(r.p_value),
                    exact: Some(r.exact),
                    note: None,
                },
                Err(e) => PairwiseTest {
                    a: names[i].clone(),
                    b: names[j].clone(),
                    statistic: None,
                    p_value: None,
                    exact: None,
                    note: Some(match e {
                        Error::TooFewDifferences(0) => "no nonzero differences".to_string(),
                        other => other.to_string(),
                    }),
                },
            };
            pairwise.push(test);
        }
    }

    let per_step: BTreeMap<String, Vec<f64>> = methods.iter().map(|(k, v)| (k.clone(), v.per_step_ape.clone())).collect();
    let regime = match &run.labels {
        Some(labels) => per_regime_report(&per_step, labels)?,
        None => RegimeReport {
            methods: per_step.keys().cloned().collect(),
            rows: BTreeMap::new(),
        },
    };
    let regime_truth = run
        .truth_labels
        .as_ref()
        .map(|labels| per_regime_report(&per_step, labels))
        .transpose()?;

    let mut meals_vs_reference = BTreeMap::new();
    if let Some(reference) = methods.get(&run.reference) {
        for (name, m) in &methods {
            meals_vs_reference.insert(name.clone(), annualized_meals(reference.mae_mean, m.mae_mean, run.periods_per_year));
        }
    }

    Ok(EvalReport {
        periods: run.periods.clone(),
        actuals: run.actuals.clone(),
        methods,
        pairwise,
        regime,
        regime_truth,
        reference: run.reference.clone(),
        meals_vs_reference,
        failures: Vec::new(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Seed-averaged per-step errors: `period,actual,{method}_ae,{method}_ape,...`.
    pub fn per_step_csv(&self) -> String {
        let mut out = String::from("period,actual");
        for name in self.methods.keys() {
            out.push_str(&format!(",{name}_ae,{name}_ape"));
        }
        out.push('\n');
        for (t, (p, a)) in self.periods.iter().zip(&self.actuals).enumerate() {
            out.push_str(&format!("{p},{a}"));
            for m in self.methods.values() {
                out.push_str(&format!(",{},{}", m.per_step_ae[t], m.per_step_ape[t]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation report\n\n");
        out.push_str(&format!("Evaluated steps: {}", self.periods.len()));
        if let (Some(first), Some(last)) = (self.periods.first(), self.periods.last()) {
            out.push_str(&format!(" ({first} to {last})"));
        }
        out.push_str("\n\n## Overall performance\n\n");
        out.push_str("| Method | Seeds | MAE (10^3 lb) | MAPE (%) | Meals/yr vs ");
        out.push_str(&self.reference);
        out.push_str(" |\n|---|---|---|---|---|\n");
        for (name, m) in &self.methods {
            let meals = self
                .meals_vs_reference
                .get(name)
                .map_or_else(String::new, |v| format!("{v:.0}"));
            out.push_str(&format!(
                "| {name} | {} | {:.2} ± {:.2} | {:.2} ± {:.2} | {meals} |\n",
                m.seeds,
                m.mae_mean / 1000.0,
                m.mae_std / 1000.0,
                m.mape_mean,
                m.mape_std
            ));
        }
        out.push_str("\n## MAPE by drift regime (unsupervised labels)\n\n");
        out.push_str(&self.regime.to_markdown());
        if let Some(truth) = &self.regime_truth {
            out.push_str("\n## MAPE by drift regime (generator ground truth)\n\n");
            out.push_str(&truth.to_markdown());
        }
        out.push_str("\n## Paired Wilcoxon signed-rank tests (per-step MAPE)\n\n| A | B | W | p | |\n|---|---|---|---|---|\n");
        for t in &self.pairwise {
            match (t.statistic, t.p_value) {
                (Some(w), Some(p)) => out.push_str(&format!(
                    "| {} | {} | {w} | {p:.4} | {} |\n",
                    t.a,
                    t.b,
                    if t.exact == Some(true) { "exact" } else { "normal approx." }
                )),
                _ => out.push_str(&format!("| {} | {} | | | {} |\n", t.a, t.b, t.note.as_deref().unwrap_or(""))),
            }
        }
        if !self.failures.is_empty() {
            out.push_str("\n## Failures\n\n");
            for f in &self.failures {
                out.push_str(&format!("- {} (seed {}): {}\n", f.method, f.seed, f.error));
            }
        }
        out
    }
}
