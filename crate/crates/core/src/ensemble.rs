//! Weighted combination, equal-weight averaging and genetic-algorithm weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::ForecastMatrix;
use crate::stats::derive_seed;

/// Tolerance on the unit-sum constraint.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("weight vector is empty"));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::invalid(format!("weight {w} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Normalizes nonnegative raw scores; all-zero scores become uniform.
    pub fn from_unnormalized(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("raw weights must be finite and nonnegative"));
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return average_weights(raw.len());
        }
        Self::new(raw.iter().map(|v| v / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for WeightVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WeightVector> for Vec<f64> {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

/// Weighted sum of predictions.
pub fn apply_weights(predictions: &[f64], weights: &WeightVector) -> Result<f64> {
    if predictions.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: weights.len(),
            actual: predictions.len(),
        });
    }
    Ok(predictions.iter().zip(weights.as_slice()).map(|(p, w)| p * w).sum())
}

pub fn average_weights(k: usize) -> Result<WeightVector> {
    if k == 0 {
        return Err(Error::invalid("cannot average zero predictions"));
    }
    Ok(WeightVector(vec![1.0 / k as f64; k]))
}

/// Simple-average prediction at every step in `steps`.
pub fn run_average_forecaster(matrix: &ForecastMatrix, steps: std::ops::Range<usize>) -> Result<Vec<f64>> {
    steps
        .map(|t| {
            let available = matrix.available(t);
            let w = average_weights(available.len())
                .map_err(|_| Error::invalid(format!("no prediction available at {}", matrix.periods()[t])))?;
            apply_weights(&available, &w)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub generations: usize,
    pub population_size: usize,
    pub selection_fraction: f64,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub mutation_scale: f64,
    pub fitness_window: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            generations: 50,
            population_size: 50,
            selection_fraction: 0.25,
            crossover_prob: 0.9,
            mutation_prob: 0.1,
            mutation_scale: 0.1,
            fitness_window: 24,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
            ("selection_fraction", self.selection_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("ga.{name} must be in [0, 1], got {p}")));
            }
        }
        if self.generations == 0 || self.population_size == 0 || self.fitness_window == 0 {
            return Err(Error::invalid("ga.generations, population_size and fitness_window must be >= 1"));
        }
        if !(self.mutation_scale >= 0.0) {
            return Err(Error::invalid("ga.mutation_scale must be >= 0"));
        }
        Ok(())
    }
}

/// Outcome of one GA fit.
#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub weights: WeightVector,
    /// Negative window MAE of the returned weights.
    pub best_fitness: f64,
    /// Best fitness after each generation (index 0 is the initial population).
    pub fitness_history: Vec<f64>,
    pub initial_population: Vec<Vec<f64>>,
}

fn fitness(genes: &[f64], window: &[Vec<f64>], actuals: &[f64]) -> f64 {
    let sum: f64 = genes.iter().sum();
    let k = genes.len() as f64;
    let mut total = 0.0;
    for (row, y) in window.iter().zip(actuals) {
        let pred: f64 = if sum > 0.0 {
            row.iter().zip(genes).map(|(p, g)| p * g).sum::<f64>() / sum
        } else {
            row.iter().sum::<f64>() / k
        };
        total += (pred - y).abs();
    }
    -total / actuals.len() as f64
}

/// Evolves a weight vector minimizing MAE over a window of predictions.
///
/// `window[s][i]` is model `i`'s prediction at window step `s`; every model
/// must be present at every step. Truncation selection keeps the top
/// `selection_fraction`; children come from uniform crossover of two random
/// parents followed by per-gene uniform mutation clamped to [0, 1]. The best
/// individual survives unchanged each generation.
pub fn ga_optimize(window: &[Vec<f64>], actuals: &[f64], config: &GaConfig) -> Result<GaOutcome> {
    config.validate()?;
    if window.len() != actuals.len() {
        return Err(Error::LengthMismatch {
            expected: actuals.len(),
            actual: window.len(),
        });
    }
    let k = window.first().map_or(0, |r| r.len());
    if k == 0 || actuals.is_empty() {
        return Err(Error::NoCompleteModels);
    }
    if window.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("ragged GA window"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pop_size = config.population_size.max(2);
    let population: Vec<Vec<f64>> = (0..pop_size)
        .map(|_| (0..k).map(|_| rng.random::<f64>()).collect())
        .collect();
    let initial_population = population.clone();
    let n_parents = ((pop_size as f64 * config.selection_fraction).round() as usize).clamp(1, pop_size);

    let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(pop_size);
    let mut fitness_history = Vec::with_capacity(config.generations + 1);
    let rank = |pop: Vec<Vec<f64>>, scored: &mut Vec<(f64, Vec<f64>)>| {
        scored.clear();
        scored.extend(pop.into_iter().map(|g| (fitness(&g, window, actuals), g)));
        // stable sort keeps the earlier individual on ties
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    };
    rank(population, &mut scored);
    fitness_history.push(scored[0].0);

    for _ in 0..config.generations {
        let parents: Vec<&Vec<f64>> = scored[..n_parents].iter().map(|(_, g)| g).collect();
        let mut next = Vec::with_capacity(pop_size);
        next.push(scored[0].1.clone());
        while next.len() < pop_size {
            let a = parents[rng.random_range(0..n_parents)];
            let b = parents[rng.random_range(0..n_parents)];
            let mut child: Vec<f64> = if rng.random::<f64>() < config.crossover_prob {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| if rng.random::<bool>() { *x } else { *y })
                    .collect()
            } else {
                a.clone()
            };
            for gene in child.iter_mut() {
                if rng.random::<f64>() < config.mutation_prob {
                    let delta = rng.random_range(-1.0..=1.0) * config.mutation_scale;
                    *gene = (*gene + delta).clamp(0.0, 1.0);
                }
            }
            next.push(child);
        }
        rank(next, &mut scored);
        fitness_history.push(scored[0].0);
    }

    let (best_fitness, best) = scored.swap_remove(0);
    Ok(GaOutcome {
        weights: WeightVector::from_unnormalized(&best)?,
        best_fitness,
        fitness_history,
        initial_population,
    })
}

/// Per-step GA forecast over a range of steps.
#[derive(Debug, Clone, PartialEq)]
pub struct GaForecast {
    pub predictions: Vec<f64>,
    /// Per step: `(matrix column, weight)` for every column that received weight.
    pub weights: Vec<Vec<(usize, f64)>>,
    /// Steps that fell back to equal weights because no model covered the window.
    pub fallback_steps: Vec<usize>,
}

/// Refits GA weights at each step on the trailing `fitness_window` steps.
///
/// Models missing any prediction in the window (or at the target step) get
/// weight 0. When no model qualifies, the step falls back to equal weights
/// over the predictions available at that step.
pub fn run_ga_forecaster(
    actuals: &[f64],
    matrix: &ForecastMatrix,
    steps: std::ops::Range<usize>,
    config: &GaConfig,
) -> Result<GaForecast> {
    config.validate()?;
    if actuals.len() != matrix.n_steps() {
        return Err(Error::LengthMismatch {
            expected: matrix.n_steps(),
            actual: actuals.len(),
        });
    }
    let mut out = GaForecast {
        predictions: Vec::with_capacity(steps.len()),
        weights: Vec::with_capacity(steps.len()),
        fallback_steps: Vec::new(),
    };
    for t in steps {
        let start = t.saturating_sub(config.fitness_window);
        let eligible: Vec<usize> = (0..matrix.n_models())
            .filter(|&i| start < t && (start..=t).all(|s| matrix.row(s)[i].is_some()))
            .collect();
        let window: Vec<Vec<f64>> = (start..t)
            .map(|s| eligible.iter().map(|&i| matrix.row(s)[i].unwrap_or_default()).collect())
            .collect();
        let step_config = GaConfig {
            seed: derive_seed(config.seed, t as u64),
            ..config.clone()
        };
        match ga_optimize(&window, &actuals[start..t], &step_config) {
            Ok(fit) => {
                let preds: Vec<f64> = eligible.iter().map(|&i| matrix.row(t)[i].unwrap_or_default()).collect();
                out.predictions.push(apply_weights(&preds, &fit.weights)?);
                out.weights.push(eligible.iter().copied().zip(fit.weights.as_slice().iter().copied()).collect());
            }
            Err(Error::NoCompleteModels) => {
                let cols: Vec<usize> = (0..matrix.n_models()).filter(|&i| matrix.row(t)[i].is_some()).collect();
                let w = average_weights(cols.len())
                    .map_err(|_| Error::invalid(format!("no prediction available at {}", matrix.periods()[t])))?;
                let preds: Vec<f64> = cols.iter().map(|&i| matrix.row(t)[i].unwrap_or_default()).collect();
                out.predictions.push(apply_weights(&preds, &w)?);
                out.weights.push(cols.into_iter().zip(w.as_slice().iter().copied()).collect());
                out.fallback_steps.push(t);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
