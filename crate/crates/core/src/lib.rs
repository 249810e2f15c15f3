//! Forecast ensembling for food-bank donation series: a pool of classical
//! one-step forecasters, rolling features, learner clustering, drift
//! labelling, averaging and genetic-algorithm baselines, and a PPO agent that
//! learns per-step ensemble weights.

pub mod cluster;
pub mod drift;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod features;
pub mod pipeline;
pub mod pool;
pub mod rl;
pub mod series;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use series::{DonationSeries, Frequency, Period};
