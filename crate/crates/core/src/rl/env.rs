//! Sequential weighting environment over a forecast matrix.

use std::ops::Range;
use std::sync::Arc;

use crate::cluster::ClusterForecastMatrix;
use crate::ensemble::{WeightVector, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::eval;
use crate::features::{FeatureTable, Standardizer};
use crate::pool::ForecastMatrix;
use crate::series::{DonationSeries, Period};
use crate::stats;

/// Observation at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RlState {
    pub step: usize,
    /// Standardized features.
    pub features: Vec<f64>,
    /// Slot predictions divided by the training mean.
    pub predictions: Vec<f64>,
    pub previous_weights: Vec<f64>,
    /// Plain mode only: which learners are available.
    pub mask: Option<Vec<bool>>,
}

impl RlState {
    /// Flat network input: features, predictions, previous weights.
    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(self.features.len() + 2 * self.predictions.len());
        obs.extend_from_slice(&self.features);
        obs.extend_from_slice(&self.predictions);
        obs.extend_from_slice(&self.previous_weights);
        obs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlAction {
    pub weights: WeightVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlReward {
    pub value: f64,
}

/// How unavailable slots are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotMode {
    /// Missing cells repeat the slot's last value.
    CarryForward,
    /// Missing cells take the row mean and are masked.
    PadAndMask,
}

/// Per-step inputs shared by every episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvData {
    pub periods: Vec<Period>,
    pub actuals: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    /// Unscaled slot predictions; slots without a value hold 0 (carry-forward) or the row mean.
    pub predictions: Vec<Vec<f64>>,
    pub masks: Option<Vec<Vec<bool>>>,
    /// Slots holding a value at each step (after carry-forward).
    pub availability: Vec<usize>,
    pub scale: f64,
    pub slot_names: Vec<String>,
}

impl EnvData {
    /// Builds from raw cells. `features` must already be standardized.
    pub fn from_cells(
        periods: Vec<Period>,
        actuals: Vec<f64>,
        features: Vec<Vec<f64>>,
        cells: &[Vec<Option<f64>>],
        mode: SlotMode,
        scale: f64,
        slot_names: Vec<String>,
    ) -> Result<Self> {
        let n = actuals.len();
        for len in [periods.len(), features.len(), cells.len()] {
            if len != n {
                return Err(Error::LengthMismatch { expected: n, actual: len });
            }
        }
        let width = slot_names.len();
        if width == 0 {
            return Err(Error::invalid("environment needs at least one slot"));
        }
        if let Some(row) = cells.iter().find(|r| r.len() != width) {
            return Err(Error::LengthMismatch { expected: width, actual: row.len() });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::invalid(format!("prediction scale must be positive, got {scale}")));
        }
        let mut predictions = Vec::with_capacity(n);
        let mut availability = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut last: Vec<Option<f64>> = vec![None; width];
        for row in cells {
            match mode {
                SlotMode::CarryForward => {
                    for (l, c) in last.iter_mut().zip(row) {
                        if c.is_some() {
                            *l = *c;
                        }
                    }
                    availability.push(last.iter().filter(|v| v.is_some()).count());
                    predictions.push(last.iter().map(|v| v.unwrap_or(0.0)).collect());
                }
                SlotMode::PadAndMask => {
                    let avail: Vec<f64> = row.iter().flatten().copied().collect();
                    let fill = if avail.is_empty() { 0.0 } else { stats::mean(&avail) };
                    availability.push(avail.len());
                    predictions.push(row.iter().map(|c| c.unwrap_or(fill)).collect());
                    masks.push(row.iter().map(Option::is_some).collect());
                }
            }
        }
        Ok(Self {
            periods,
            actuals,
            features,
            predictions,
            masks: (mode == SlotMode::PadAndMask).then_some(masks),
            availability,
            scale,
            slot_names,
        })
    }

    /// Cluster-mean slots; features standardized on the first `n_train` rows.
    pub fn clustered(series: &DonationSeries, features: &FeatureTable, matrix: &ClusterForecastMatrix, n_train: usize) -> Result<Self> {
        let (feats, scale) = standardized_inputs(series, features, matrix.periods.len(), n_train)?;
        Self::from_cells(
            series.periods().to_vec(),
            series.values().to_vec(),
            feats,
            &matrix.entries,
            SlotMode::CarryForward,
            scale,
            matrix.column_names(),
        )
    }

    /// One slot per learner with masking.
    pub fn plain(series: &DonationSeries, features: &FeatureTable, matrix: &ForecastMatrix, n_train: usize) -> Result<Self> {
        let (feats, scale) = standardized_inputs(series, features, matrix.n_steps(), n_train)?;
        Self::from_cells(
            series.periods().to_vec(),
            series.values().to_vec(),
            feats,
            matrix.rows(),
            SlotMode::PadAndMask,
            scale,
            matrix.specs().iter().map(|s| s.name()).collect(),
        )
    }

    pub fn n_steps(&self) -> usize {
        self.actuals.len()
    }

    pub fn width(&self) -> usize {
        self.slot_names.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn obs_dim(&self) -> usize {
        self.feature_dim() + 2 * self.width()
    }

    pub fn mask(&self, step: usize) -> Option<&[bool]> {
        self.masks.as_ref().map(|m| m[step].as_slice())
    }

    /// A step can be acted on when at least one slot holds a value.
    pub fn is_ready(&self, step: usize) -> bool {
        self.availability[step] > 0
    }

    /// First step in `range` with the range's highest availability, which is
    /// full availability whenever any step in the range has it.
    pub fn episode_start(&self, range: Range<usize>) -> Option<usize> {
        let best = self.availability[range.clone()].iter().copied().max().filter(|m| *m > 0)?;
        range.into_iter().find(|&t| self.availability[t] == best)
    }
}

fn standardized_inputs(series: &DonationSeries, features: &FeatureTable, n_matrix: usize, n_train: usize) -> Result<(Vec<Vec<f64>>, f64)> {
    let n = series.len();
    if features.rows.len() != n || n_matrix != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: if features.rows.len() != n { features.rows.len() } else { n_matrix },
        });
    }
    if n_train == 0 || n_train > n {
        return Err(Error::invalid(format!("training length {n_train} outside 1..={n}")));
    }
    let standardizer = Standardizer::fit(&features.rows[..n_train])?;
    let feats = features.rows.iter().map(|r| standardizer.transform(r)).collect();
    Ok((feats, stats::mean(&series.values()[..n_train])))
}

/// Episode cursor over a step range of shared data.
#[derive(Debug, Clone)]
pub struct EnsembleEnv {
    data: Arc<EnvData>,
    range: Range<usize>,
    start: usize,
    t: usize,
    previous_weights: Vec<f64>,
    last_prediction: Option<f64>,
}

impl EnsembleEnv {
    /// Episodes begin at the first fully available step inside `range`.
    pub fn new(data: Arc<EnvData>, range: Range<usize>) -> Result<Self> {
        if range.end > data.n_steps() || range.is_empty() {
            return Err(Error::invalid(format!(
                "episode range {}..{} invalid for {} steps",
                range.start,
                range.end,
                data.n_steps()
            )));
        }
        let start = data
            .episode_start(range.clone())
            .ok_or_else(|| Error::validation("no step in the episode range has available predictions"))?;
        let w = data.width();
        Ok(Self {
            data,
            range,
            start,
            t: start,
            previous_weights: vec![1.0 / w as f64; w],
            last_prediction: None,
        })
    }

    pub fn data(&self) -> &Arc<EnvData> {
        &self.data
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.range.end
    }

    pub fn current_step(&self) -> usize {
        self.t
    }

    /// Ensemble prediction from the most recent step.
    pub fn last_prediction(&self) -> Option<f64> {
        self.last_prediction
    }

    fn state_at(&self, step: usize) -> RlState {
        let d = &self.data;
        RlState {
            step,
            features: d.features[step].clone(),
            predictions: d.predictions[step].iter().map(|p| p / d.scale).collect(),
            previous_weights: self.previous_weights.clone(),
            mask: d.mask(step).map(<[bool]>::to_vec),
        }
    }
}

pub fn env_reset(env: &mut EnsembleEnv) -> RlState {
    let w = env.data.width();
    env.t = env.start;
    env.previous_weights = vec![1.0 / w as f64; w];
    env.last_prediction = None;
    env.state_at(env.t)
}

/// Applies `action` at the current step. When `done`, the returned state
/// repeats the final step's inputs with the new previous weights.
pub fn env_step(env: &mut EnsembleEnv, action: &RlAction) -> Result<(RlState, RlReward, bool)> {
    let w = action.weights.as_slice();
    if w.len() != env.data.width() {
        return Err(Error::LengthMismatch {
            expected: env.data.width(),
            actual: w.len(),
        });
    }
    let sum: f64 = w.iter().sum();
    if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::invalid("action is not on the simplex"));
    }
    if env.t >= env.range.end {
        return Err(Error::invalid("episode already finished; call env_reset"));
    }
    let step = env.t;
    let pred: f64 = env.data.predictions[step].iter().zip(w).map(|(p, w)| p * w).sum();
    let value = -eval::mape(&[pred], &[env.data.actuals[step]])?;
    env.previous_weights = w.to_vec();
    env.last_prediction = Some(pred);
    env.t += 1;
    while env.t < env.range.end && !env.data.is_ready(env.t) {
        env.t += 1;
    }
    let done = env.t >= env.range.end;
    let state = env.state_at(if done { step } else { env.t });
    Ok((state, RlReward { value }, done))
}
