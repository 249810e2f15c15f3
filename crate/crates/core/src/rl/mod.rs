//! Policy-gradient ensembling over learners (plain RL) or learner clusters (FoodRL).

pub mod env;
pub mod nn;
pub mod policy;
pub mod ppo;

use std::sync::Arc;

pub use env::{env_reset, env_step, EnsembleEnv, EnvData, RlAction, RlReward, RlState, SlotMode};
pub use policy::{masked_softmax, policy_weights, Policy, PolicyMeta, Sampling, POLICY_FORMAT_VERSION};
pub use ppo::{ppo_loss, ppo_train, PpoBatch, PpoConfig, TrainedPolicy};

use crate::cluster::{aggregate_clusters, cluster_learners, select_k, ClusterAssignment};
use crate::ensemble::WeightVector;
use crate::error::{Error, Result};
use crate::features::{build_feature_table, default_windows};
use crate::pool::ForecastMatrix;
use crate::series::DonationSeries;
use crate::stats::derive_seed;

/// Action-space construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClusterChoice {
    /// One slot per learner.
    None,
    Fixed(usize),
    /// Best silhouette among the candidates.
    Select(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RlRunSpec {
    pub test_periods: usize,
    pub clusters: ClusterChoice,
    /// Defaults to the frequency's standard windows.
    pub feature_windows: Option<Vec<usize>>,
    pub ppo: PpoConfig,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RlRunOutput {
    /// One per test step.
    pub predictions: Vec<f64>,
    pub weights: Vec<WeightVector>,
    pub assignment: Option<ClusterAssignment>,
    pub trained: TrainedPolicy,
    /// First step of every training episode.
    pub episode_start: usize,
}

/// Deterministic rollout of a frozen policy from the env's start to its end;
/// returns `(step, prediction, weights)` per visited step.
pub fn rollout_deterministic(policy: &Policy, env: &EnsembleEnv) -> Result<Vec<(usize, f64, WeightVector)>> {
    let mut env = env.clone();
    let mut state = env_reset(&mut env);
    let mut out = Vec::new();
    loop {
        let step = state.step;
        let weights = policy_weights(policy, &state, state.mask.as_deref(), Sampling::Deterministic)?;
        let (next, _, done) = env_step(
            &mut env,
            &RlAction {
                weights: weights.clone(),
            },
        )?;
        out.push((step, env.last_prediction().expect("step just taken"), weights));
        if done {
            return Ok(out);
        }
        state = next;
    }
}

/// Clusters (unless plain), trains on the training split, then rolls the
/// frozen policy through the test split.
pub fn run_foodrl(series: &DonationSeries, matrix: &ForecastMatrix, spec: &RlRunSpec) -> Result<RlRunOutput> {
    let n = series.len();
    if matrix.n_steps() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: matrix.n_steps(),
        });
    }
    if spec.test_periods == 0 || spec.test_periods >= n {
        return Err(Error::invalid(format!("test_periods {} must lie in 1..{n}", spec.test_periods)));
    }
    let n_train = n - spec.test_periods;
    let windows = spec
        .feature_windows
        .clone()
        .unwrap_or_else(|| default_windows(series.frequency()));
    let features = build_feature_table(series, &windows)?;
    let cluster_seed = derive_seed(spec.seed, 1);
    let (data, assignment) = match &spec.clusters {
        ClusterChoice::None => (EnvData::plain(series, &features, matrix, n_train)?, None),
        choice => {
            let train = matrix.head(n_train);
            let k = match choice {
                ClusterChoice::Fixed(k) => *k,
                ClusterChoice::Select(candidates) => select_k(&train, candidates, cluster_seed)?,
                ClusterChoice::None => unreachable!(),
            };
            let assignment = cluster_learners(&train, k, cluster_seed)?;
            let clustered = aggregate_clusters(matrix, &assignment)?;
            (EnvData::clustered(series, &features, &clustered, n_train)?, Some(assignment))
        }
    };
    let data = Arc::new(data);
    let train_env = EnsembleEnv::new(data.clone(), 0..n_train)?;
    let ppo = PpoConfig {
        seed: derive_seed(spec.seed, 2),
        ..spec.ppo.clone()
    };
    let trained = ppo_train(&train_env, &ppo)?;
    let full_env = EnsembleEnv::new(data, 0..n)?;
    let mut predictions = Vec::with_capacity(spec.test_periods);
    let mut weights = Vec::with_capacity(spec.test_periods);
    for (step, pred, w) in rollout_deterministic(&trained.policy, &full_env)? {
        if step >= n_train {
            predictions.push(pred);
            weights.push(w);
        }
    }
    if predictions.len() != spec.test_periods {
        return Err(Error::validation(format!(
            "policy produced {} of {} test predictions",
            predictions.len(),
            spec.test_periods
        )));
    }
    Ok(RlRunOutput {
        predictions,
        weights,
        assignment,
        trained,
        episode_start: train_env.start(),
    })
}
