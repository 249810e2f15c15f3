//! Seeded donation-like series with seasonality, noise and disaster shocks.
//!
//! ```text
//! value_t = base * (1 + A sin(2 pi t / period) + shock_t + eps_t),  eps_t ~ N(0, noise_std)
//! ```
//!
//! floored at `0.05 * base`, for `t = 1..=N`. Ground-truth regimes come from
//! the percent change of the noise-free signal: |change| <= 5% is a slight
//! trend, up to 20% moderate, beyond that extreme.
//!
//! Noise uses ChaCha8 seeded through `seed_from_u64`, 53-bit uniforms from
//! the top of each `u64`, and the Box-Muller cosine branch, so a seed
//! reproduces the same series on any platform.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::drift::{percent_changes, DriftLabel};
use crate::error::{Error, Result};
use crate::series::{DonationSeries, Frequency, Period};

/// Percent-change bound of a slight trend.
pub const SLIGHT_THRESHOLD: f64 = 5.0;
/// Percent-change bound between moderate and extreme movements.
pub const EXTREME_THRESHOLD: f64 = 20.0;
/// Floor on generated values, as a fraction of the base level.
pub const FLOOR_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShockKind {
    /// Jump that halves every `decay_halflife` steps.
    SpikeDecay,
    /// Temporary offset lasting `duration` steps.
    StepDecline,
    /// Permanent offset from `start` onwards.
    LevelShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockSpec {
    pub kind: ShockKind,
    /// 1-based step at which the shock begins.
    pub start: usize,
    /// Signed fraction of the base level.
    pub magnitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_halflife: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<usize>,
}

impl ShockSpec {
    /// Contribution of this shock at 1-based step `t`.
    pub fn value_at(&self, t: usize) -> f64 {
        if t < self.start {
            return 0.0;
        }
        let elapsed = (t - self.start) as f64;
        match self.kind {
            ShockKind::SpikeDecay => {
                let h = self.decay_halflife.unwrap_or(1.0);
                self.magnitude * 0.5f64.powf(elapsed / h)
            }
            ShockKind::StepDecline => {
                if t - self.start < self.duration.unwrap_or(1) {
                    self.magnitude
                } else {
                    0.0
                }
            }
            ShockKind::LevelShift => self.magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub frequency: Frequency,
    pub length: usize,
    pub start: Period,
    pub base_level: f64,
    pub seasonal_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
    #[serde(default)]
    pub shocks: Vec<ShockSpec>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario `{}`: {m}", self.name)));
        if !(self.base_level > 0.0 && self.base_level.is_finite()) {
            return bad(format!("base_level must be > 0, got {}", self.base_level));
        }
        if !(self.seasonal_amplitude >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("seasonal_amplitude and noise_std must be >= 0".into());
        }
        if self.length < 2 {
            return bad("length must be at least 2".into());
        }
        if self.start.frequency() != self.frequency {
            return bad(format!("start period {} does not match frequency {}", self.start, self.frequency));
        }
        for (i, s) in self.shocks.iter().enumerate() {
            if s.magnitude == 0.0 || !s.magnitude.is_finite() {
                return bad(format!("shock {i}: magnitude must be nonzero"));
            }
            if s.start < 1 || s.start > self.length {
                return bad(format!("shock {i}: start {} outside [1, {}]", s.start, self.length));
            }
            match s.kind {
                ShockKind::SpikeDecay if !(s.decay_halflife.unwrap_or(0.0) >= 1.0) => {
                    return bad(format!("shock {i}: spike_decay needs decay_halflife >= 1"));
                }
                ShockKind::StepDecline if s.duration.unwrap_or(0) < 1 => {
                    return bad(format!("shock {i}: step_decline needs duration >= 1"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn season(&self) -> f64 {
        self.frequency.season_length() as f64
    }

    /// Noise-free level at 1-based step `t`, floored.
    pub fn clean_value(&self, t: usize) -> f64 {
        let seasonal = self.seasonal_amplitude * (2.0 * PI * t as f64 / self.season()).sin();
        let shock: f64 = self.shocks.iter().map(|s| s.value_at(t)).sum();
        (self.base_level * (1.0 + seasonal + shock)).max(FLOOR_FRACTION * self.base_level)
    }
}

/// Truth label of a percent change.
pub fn regime_for_change(pct: f64) -> DriftLabel {
    let a = pct.abs();
    if a <= SLIGHT_THRESHOLD {
        DriftLabel::SlightTrend
    } else if a <= EXTREME_THRESHOLD {
        if pct > 0.0 {
            DriftLabel::ModerateIncrease
        } else {
            DriftLabel::ModerateDecline
        }
    } else if pct > 0.0 {
        DriftLabel::ExtremeIncrease
    } else {
        DriftLabel::ExtremeDecline
    }
}

struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

pub fn generate(config: &ScenarioConfig) -> Result<DonationSeries> {
    config.validate()?;
    let mut noise = GaussianStream::new(config.seed);
    let floor = FLOOR_FRACTION * config.base_level;
    let mut values = Vec::with_capacity(config.length);
    let mut clean = Vec::with_capacity(config.length);
    for t in 1..=config.length {
        let seasonal = config.seasonal_amplitude * (2.0 * PI * t as f64 / config.season()).sin();
        let shock: f64 = config.shocks.iter().map(|s| s.value_at(t)).sum();
        let eps = config.noise_std * noise.standard_normal();
        values.push((config.base_level * (1.0 + seasonal + shock + eps)).max(floor));
        clean.push(config.clean_value(t));
    }
    let labels = percent_changes(&clean).into_iter().map(regime_for_change).collect();
    DonationSeries::from_start(config.start, values)?.with_regime_truth(labels)
}

const SUITE: [(&str, &str); 4] = [
    ("east", include_str!("../../../configs/scenarios/east.toml")),
    ("west", include_str!("../../../configs/scenarios/west.toml")),
    ("east_weekly", include_str!("../../../configs/scenarios/east_weekly.toml")),
    ("west_weekly", include_str!("../../../configs/scenarios/west_weekly.toml")),
];

pub fn scenario_names() -> Vec<&'static str> {
    SUITE.iter().map(|(n, _)| *n).collect()
}

/// The versioned benchmark scenarios with their seed replaced by `seed`.
pub fn benchmark_suite(seed: u64) -> Result<BTreeMap<String, ScenarioConfig>> {
    SUITE
        .iter()
        .map(|(name, text)| {
            let mut config = ScenarioConfig::from_toml(text)?;
            config.seed = seed;
            Ok((name.to_string(), config))
        })
        .collect()
}

/// One scenario from the suite, keeping the seed stored in its file.
pub fn suite_scenario(name: &str) -> Result<ScenarioConfig> {
    let (_, text) = SUITE
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown scenario `{name}`; known: {:?}", scenario_names())))?;
    ScenarioConfig::from_toml(text)
}
