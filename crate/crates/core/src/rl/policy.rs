//! Actor-critic policy over simplex weights.
//!
//! The actor maps a state to one logit mean per weight slot; exploration adds
//! Gaussian noise with a learned, state-independent log-std in logit space.
//! Weights are the softmax of the (sampled or mean) logits, with masked
//! slots forced to zero. The critic is a separate tanh network with a scalar
//! output.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::nn::MlpLayout;
use super::ppo::PpoConfig;
use super::RlState;
use crate::ensemble::WeightVector;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MEPOLICY";
pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub seed: u64,
    pub config: PpoConfig,
    pub final_mean_reward: f64,
    /// Names of the weight slots (learners or clusters).
    #[serde(default)]
    pub action_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    obs_dim: usize,
    act_dim: usize,
    hidden: Vec<usize>,
    actor: MlpLayout,
    critic: MlpLayout,
    /// actor | critic | log_std
    pub params: Vec<f64>,
    pub meta: PolicyMeta,
}

/// Action selection mode.
pub enum Sampling<'a> {
    /// Softmax of the mean logits.
    Deterministic,
    /// Softmax of Gaussian-perturbed logits.
    Stochastic(&'a mut ChaCha8Rng),
}

/// Softmax over unmasked slots; masked slots get exactly zero.
pub fn masked_softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let on = |i: usize| mask.map_or(true, |m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| on(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, v)| if on(i) { (v - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

impl Policy {
    pub fn new(obs_dim: usize, act_dim: usize, config: &PpoConfig, seed: u64, rng: &mut impl Rng) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden_layers);
        actor_sizes.push(act_dim);
        let mut critic_sizes = vec![obs_dim];
        critic_sizes.extend(&config.hidden_layers);
        critic_sizes.push(1);
        let actor = MlpLayout::new(actor_sizes);
        let critic = MlpLayout::new(critic_sizes);
        let (na, nc) = (actor.n_params(), critic.n_params());
        let mut params = vec![0.0; na + nc + act_dim];
        let gain = 2f64.sqrt();
        actor.init(&mut params[..na], gain, 0.01, rng);
        critic.init(&mut params[na..na + nc], gain, 1.0, rng);
        params[na + nc..].iter_mut().for_each(|v| *v = config.log_std_init);
        Self {
            obs_dim,
            act_dim,
            hidden: config.hidden_layers.clone(),
            actor,
            critic,
            params,
            meta: PolicyMeta {
                seed,
                config: config.clone(),
                final_mean_reward: f64::NAN,
                action_names: Vec::new(),
            },
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub(crate) fn actor_layout(&self) -> &MlpLayout {
        &self.actor
    }

    pub(crate) fn critic_layout(&self) -> &MlpLayout {
        &self.critic
    }

    pub(crate) fn actor_range(&self) -> std::ops::Range<usize> {
        0..self.actor.n_params()
    }

    pub(crate) fn critic_range(&self) -> std::ops::Range<usize> {
        let a = self.actor.n_params();
        a..a + self.critic.n_params()
    }

    pub(crate) fn log_std_range(&self) -> std::ops::Range<usize> {
        let s = self.actor.n_params() + self.critic.n_params();
        s..s + self.act_dim
    }

    pub fn log_std(&self) -> &[f64] {
        &self.params[self.log_std_range()]
    }

    pub fn mean_logits(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.forward(&self.params[self.actor_range()], obs, None)
    }

    pub fn value(&self, obs: &[f64]) -> f64 {
        self.critic.forward(&self.params[self.critic_range()], obs, None)[0]
    }

    /// Gaussian log-density of raw logits `action` over unmasked slots.
    pub fn log_prob(&self, mean: &[f64], action: &[f64], mask: Option<&[bool]>) -> f64 {
        let log_std = self.log_std();
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        (0..self.act_dim)
            .filter(|&i| mask.map_or(true, |m| m[i]))
            .map(|i| {
                let z = (action[i] - mean[i]) / log_std[i].exp();
                -0.5 * z * z - log_std[i] - half_ln_2pi
            })
            .sum()
    }

    /// Raw logits and simplex weights for an observation vector.
    pub fn act(&self, obs: &[f64], mask: Option<&[bool]>, sampling: Sampling<'_>) -> (Vec<f64>, Vec<f64>) {
        self.act_from_mean(self.mean_logits(obs), mask, sampling)
    }

    /// As [`Policy::act`], given precomputed mean logits.
    pub fn act_from_mean(&self, mean: Vec<f64>, mask: Option<&[bool]>, sampling: Sampling<'_>) -> (Vec<f64>, Vec<f64>) {
        let raw = match sampling {
            Sampling::Deterministic => mean,
            Sampling::Stochastic(rng) => {
                let log_std = self.log_std();
                mean.iter()
                    .zip(log_std)
                    .map(|(m, ls)| {
                        let z: f64 = StandardNormal.sample(rng);
                        m + ls.exp() * z
                    })
                    .collect()
            }
        };
        let weights = masked_softmax(&raw, mask);
        (raw, weights)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        #[derive(Serialize)]
        struct Header<'a> {
            obs_dim: usize,
            act_dim: usize,
            hidden: &'a [usize],
            meta: &'a PolicyMeta,
        }
        let header = serde_json::to_vec(&Header {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            hidden: &self.hidden,
            meta: &self.meta,
        })?;
        let mut out = Vec::with_capacity(24 + header.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&POLICY_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::validation(format!("policy file: {m}"));
        let mut magic = [0u8; 8];
        bytes.read_exact(&mut magic).map_err(|_| corrupt("truncated"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        bytes.read_exact(&mut u32buf).map_err(|_| corrupt("truncated"))?;
        let version = u32::from_le_bytes(u32buf);
        if version != POLICY_FORMAT_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        bytes.read_exact(&mut u64buf).map_err(|_| corrupt("truncated"))?;
        let header_len = u64::from_le_bytes(u64buf) as usize;
        if bytes.len() < header_len {
            return Err(corrupt("truncated header"));
        }
        #[derive(Deserialize)]
        struct Header {
            obs_dim: usize,
            act_dim: usize,
            hidden: Vec<usize>,
            meta: PolicyMeta,
        }
        let header: Header = serde_json::from_slice(&bytes[..header_len])?;
        bytes = &bytes[header_len..];
        bytes.read_exact(&mut u64buf).map_err(|_| corrupt("truncated"))?;
        let n = u64::from_le_bytes(u64buf) as usize;
        if bytes.len() != 8 * n {
            return Err(corrupt("parameter block has the wrong size"));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut config = header.meta.config.clone();
        config.hidden_layers = header.hidden.clone();
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut policy = Policy::new(header.obs_dim, header.act_dim, &config, header.meta.seed, &mut rng);
        if policy.params.len() != n {
            return Err(corrupt("parameter count does not match the declared shape"));
        }
        policy.params = params;
        policy.meta = header.meta;
        Ok(policy)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Simplex weights for a state.
pub fn policy_weights(policy: &Policy, state: &RlState, mask: Option<&[bool]>, sampling: Sampling<'_>) -> Result<WeightVector> {
    let obs = state.observation();
    if obs.len() != policy.obs_dim() || state.previous_weights.len() != policy.act_dim() {
        return Err(Error::LengthMismatch {
            expected: policy.obs_dim(),
            actual: obs.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != policy.act_dim() || !m.iter().any(|b| *b) {
            return Err(Error::invalid("mask must match the action width and enable at least one slot"));
        }
    }
    let (_, weights) = policy.act(&obs, mask, sampling);
    WeightVector::new(weights)
}
