//! Proximal policy optimization with GAE and an entropy bonus.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{env_reset, env_step, EnsembleEnv, RlAction};
use super::nn::{clip_grad_norm, Adam};
use super::policy::{Policy, Sampling};
use crate::ensemble::WeightVector;
use crate::error::{Error, Result};
use crate::stats::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden_layers: Vec<usize>,
    pub learning_rate: f64,
    pub epochs_per_update: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_episodes_per_update: usize,
    pub total_updates: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
    pub seed: u64,
    /// Multiplies rewards inside the learner only.
    pub reward_scale: f64,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
    pub log_std_init: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![64, 64],
            learning_rate: 1e-4,
            epochs_per_update: 10,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_episodes_per_update: 4,
            total_updates: 500,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
            seed: 0,
            reward_scale: 0.01,
            minibatch_size: 64,
            max_grad_norm: 0.5,
            log_std_init: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if self.hidden_layers.is_empty() || self.hidden_layers.contains(&0) {
            return bad("hidden_layers must be non-empty and positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.epochs_per_update == 0 || self.rollout_episodes_per_update == 0 || self.total_updates == 0 || self.minibatch_size == 0 {
            return bad("epochs, episodes, updates and minibatch size must be positive");
        }
        if !(self.reward_scale > 0.0) || self.entropy_coeff < 0.0 || self.value_coeff < 0.0 || self.max_grad_norm < 0.0 {
            return bad("reward_scale must be positive and coefficients nonnegative");
        }
        if !self.log_std_init.is_finite() {
            return bad("log_std_init must be finite");
        }
        Ok(())
    }
}

/// Flattened transitions with fixed advantages and return targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoBatch {
    pub observations: Vec<Vec<f64>>,
    pub masks: Vec<Option<Vec<bool>>>,
    /// Raw (pre-softmax) sampled logits.
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// Loss and its gradient with respect to `policy.params` over the whole batch.
pub fn ppo_loss(policy: &Policy, batch: &PpoBatch, config: &PpoConfig) -> (f64, Vec<f64>) {
    let idx: Vec<usize> = (0..batch.len()).collect();
    loss_on(policy, batch, &idx, config)
}

fn loss_on(policy: &Policy, batch: &PpoBatch, idx: &[usize], config: &PpoConfig) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; policy.params.len()];
    let b = idx.len() as f64;
    let actor = policy.actor_layout();
    let critic = policy.critic_layout();
    let (ar, cr, lr) = (policy.actor_range(), policy.critic_range(), policy.log_std_range());
    let log_std = policy.log_std().to_vec();
    let ent_const = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    let eps = config.clip_epsilon;
    let mut loss = 0.0;
    let mut cache = Vec::new();
    let mut d_mean = vec![0.0; policy.act_dim()];
    let mut d_log_std = vec![0.0; policy.act_dim()];
    for &i in idx {
        let obs = &batch.observations[i];
        let mask = batch.masks[i].as_deref();
        let on = |j: usize| mask.map_or(true, |m| m[j]);
        let action = &batch.actions[i];
        let adv = batch.advantages[i];

        let mean = actor.forward(&policy.params[ar.clone()], obs, Some(&mut cache));
        let logp = policy.log_prob(&mean, action, mask);
        let ratio = (logp - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        loss -= unclipped.min(clipped) / b;
        let d_logp = if unclipped <= clipped { -adv * ratio / b } else { 0.0 };

        let mut entropy = 0.0;
        for j in 0..policy.act_dim() {
            d_mean[j] = 0.0;
            d_log_std[j] = 0.0;
            if !on(j) {
                continue;
            }
            entropy += log_std[j] + ent_const;
            let sigma = log_std[j].exp();
            let z = (action[j] - mean[j]) / sigma;
            d_mean[j] = d_logp * z / sigma;
            d_log_std[j] = d_logp * (z * z - 1.0) - config.entropy_coeff / b;
        }
        loss -= config.entropy_coeff * entropy / b;
        if d_mean.iter().any(|v| *v != 0.0) {
            actor.backward(&policy.params[ar.clone()], &cache, &d_mean, &mut grad[ar.clone()]);
        }
        for (g, d) in grad[lr.clone()].iter_mut().zip(&d_log_std) {
            *g += d;
        }

        let value = critic.forward(&policy.params[cr.clone()], obs, Some(&mut cache))[0];
        let diff = value - batch.returns[i];
        loss += config.value_coeff * diff * diff / b;
        let d_value = [2.0 * config.value_coeff * diff / b];
        critic.backward(&policy.params[cr.clone()], &cache, &d_value, &mut grad[cr.clone()]);
    }
    (loss, grad)
}

struct Transition {
    obs: Vec<f64>,
    mask: Option<Vec<bool>>,
    action: Vec<f64>,
    log_prob: f64,
    value: f64,
    reward: f64,
}

struct Episode {
    steps: Vec<Transition>,
}

fn collect_episode(policy: &Policy, env: &EnsembleEnv, seed: u64) -> Result<Episode> {
    let mut env = env.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = env_reset(&mut env);
    let mut steps = Vec::new();
    loop {
        let obs = state.observation();
        let mask = state.mask.clone();
        let mean = policy.mean_logits(&obs);
        let (raw, weights) = policy.act_from_mean(mean.clone(), mask.as_deref(), Sampling::Stochastic(&mut rng));
        let log_prob = policy.log_prob(&mean, &raw, mask.as_deref());
        let value = policy.value(&obs);
        let action = RlAction {
            weights: WeightVector::new(weights)?,
        };
        let (next, reward, done) = env_step(&mut env, &action)?;
        steps.push(Transition {
            obs,
            mask,
            action: raw,
            log_prob,
            value,
            reward: reward.value,
        });
        if done {
            break;
        }
        state = next;
    }
    Ok(Episode { steps })
}

/// Final policy plus the per-update mean step reward.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPolicy {
    pub policy: Policy,
    pub reward_curve: Vec<f64>,
}

impl TrainedPolicy {
    /// `update,mean_reward` rows, one per update.
    pub fn reward_curve_csv(&self) -> String {
        let mut out = String::from("update,mean_reward\n");
        for (u, r) in self.reward_curve.iter().enumerate() {
            out.push_str(&format!("{},{}\n", u + 1, r));
        }
        out
    }
}

/// Mean per-step reward of `policy` over `episodes` stochastic rollouts.
pub fn evaluate_stochastic(policy: &Policy, env: &EnsembleEnv, episodes: usize, seed: u64) -> Result<f64> {
    let rewards = (0..episodes as u64)
        .into_par_iter()
        .map(|e| collect_episode(policy, env, derive_seed(seed, e)))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_step_reward(&rewards))
}

fn mean_step_reward(episodes: &[Episode]) -> f64 {
    let per_episode: Vec<f64> = episodes
        .iter()
        .map(|e| e.steps.iter().map(|s| s.reward).sum::<f64>() / e.steps.len() as f64)
        .collect();
    per_episode.iter().sum::<f64>() / per_episode.len() as f64
}

/// Builds the update batch: scaled rewards, GAE advantages (normalized) and returns.
fn build_batch(episodes: Vec<Episode>, config: &PpoConfig) -> PpoBatch {
    let mut batch = PpoBatch::default();
    for ep in episodes {
        let n = ep.steps.len();
        let mut adv = vec![0.0; n];
        let mut next_adv = 0.0;
        let mut next_value = 0.0;
        for i in (0..n).rev() {
            let s = &ep.steps[i];
            let delta = s.reward * config.reward_scale + config.gamma * next_value - s.value;
            next_adv = delta + config.gamma * config.gae_lambda * next_adv;
            adv[i] = next_adv;
            next_value = s.value;
        }
        for (s, a) in ep.steps.into_iter().zip(adv) {
            batch.returns.push(a + s.value);
            batch.advantages.push(a);
            batch.observations.push(s.obs);
            batch.masks.push(s.mask);
            batch.actions.push(s.action);
            batch.old_log_probs.push(s.log_prob);
        }
    }
    let n = batch.advantages.len() as f64;
    let mean = batch.advantages.iter().sum::<f64>() / n;
    let sd = (batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    batch.advantages.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
    batch
}

/// Trains a fresh policy on `env`. Deterministic given `config.seed`,
/// independent of the rayon thread count.
pub fn ppo_train(env: &EnsembleEnv, config: &PpoConfig) -> Result<TrainedPolicy> {
    config.validate()?;
    let data = env.data();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::MAX));
    let mut policy = Policy::new(data.obs_dim(), data.width(), config, config.seed, &mut rng);
    policy.meta.action_names = data.slot_names.clone();
    let mut opt = Adam::new(policy.params.len(), config.learning_rate);
    let mut curve = Vec::with_capacity(config.total_updates);
    for update in 0..config.total_updates {
        let update_seed = derive_seed(config.seed, update as u64);
        let episodes = (0..config.rollout_episodes_per_update as u64)
            .into_par_iter()
            .map(|e| collect_episode(&policy, env, derive_seed(update_seed, e)))
            .collect::<Result<Vec<_>>>()?;
        let mean_reward = mean_step_reward(&episodes);
        if !mean_reward.is_finite() {
            return Err(Error::Divergence {
                update: update + 1,
                detail: format!(
                    "mean episode reward {mean_reward}; log_std = {:?}",
                    policy.log_std()
                ),
            });
        }
        curve.push(mean_reward);
        let batch = build_batch(episodes, config);
        let mut order: Vec<usize> = (0..batch.len()).collect();
        for _ in 0..config.epochs_per_update {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch_size) {
                let (loss, mut grad) = loss_on(&policy, &batch, chunk, config);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::Divergence {
                        update: update + 1,
                        detail: format!("non-finite loss {loss} after mean reward {mean_reward}"),
                    });
                }
                clip_grad_norm(&mut grad, config.max_grad_norm);
                opt.step(&mut policy.params, &grad);
            }
        }
    }
    policy.meta.final_mean_reward = *curve.last().unwrap();
    Ok(TrainedPolicy {
        policy,
        reward_curve: curve,
    })
}
