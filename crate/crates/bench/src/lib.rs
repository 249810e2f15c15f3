//! Shared fixtures for the criterion benches.

use std::sync::Arc;

use metaens_core::cluster::{aggregate_clusters, cluster_learners};
use metaens_core::features::{build_feature_table, default_windows};
use metaens_core::pool::{build_forecast_matrix, enumerate_specs, ForecastMatrix, PoolConfig};
use metaens_core::rl::{EnsembleEnv, EnvData};
use metaens_core::synth::{generate, suite_scenario};
use metaens_core::DonationSeries;

pub const TEST_PERIODS: usize = 24;

pub fn scenario(name: &str) -> DonationSeries {
    generate(&suite_scenario(name).expect("built-in scenario")).expect("valid scenario")
}

pub fn default_matrix(series: &DonationSeries) -> ForecastMatrix {
    let pool = PoolConfig::for_frequency(series.frequency());
    let specs = enumerate_specs(&pool).expect("default pool");
    build_forecast_matrix(series, &specs, &pool.settings).expect("matrix")
}

/// Training environment over `k` learner clusters.
pub fn clustered_env(series: &DonationSeries, k: usize) -> EnsembleEnv {
    let matrix = default_matrix(series);
    let n_train = series.len() - TEST_PERIODS;
    let assignment = cluster_learners(&matrix.head(n_train), k, 1).expect("clusters");
    let clustered = aggregate_clusters(&matrix, &assignment).expect("aggregate");
    let features = build_feature_table(series, &default_windows(series.frequency())).expect("features");
    let data = EnvData::clustered(series, &features, &clustered, n_train).expect("env data");
    EnsembleEnv::new(Arc::new(data), 0..n_train).expect("env")
}
