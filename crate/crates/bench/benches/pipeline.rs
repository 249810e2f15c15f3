use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use metaens_bench::{clustered_env, scenario};
use metaens_core::cluster::kmeans;
use metaens_core::ensemble::{ga_optimize, GaConfig};
use metaens_core::pool::{build_forecast_matrix, enumerate_specs, PoolConfig};
use metaens_core::rl::{ppo_train, PpoConfig};

fn bench_matrix(c: &mut Criterion) {
    let series = scenario("west");
    let pool = PoolConfig::for_frequency(series.frequency());
    let specs = enumerate_specs(&pool).unwrap();
    c.bench_function("forecast_matrix_west_monthly", |b| {
        b.iter(|| build_forecast_matrix(black_box(&series), &specs, &pool.settings).unwrap())
    });
}

fn bench_kmeans(c: &mut Criterion) {
    let points: Vec<Vec<f64>> = (0..80)
        .map(|i| (0..100).map(|t| ((i * 7 + t * 13) % 29) as f64 / 29.0 + (i % 4) as f64).collect())
        .collect();
    c.bench_function("kmeans_80x100_k8", |b| b.iter(|| kmeans(black_box(&points), 8, 1, 300).unwrap()));
}

fn bench_ga(c: &mut Criterion) {
    let window: Vec<Vec<f64>> = (0..24)
        .map(|t| (0..20).map(|j| 100.0 + ((t * 31 + j * 17) % 23) as f64).collect())
        .collect();
    let actuals: Vec<f64> = (0..24).map(|t| 110.0 + (t % 5) as f64).collect();
    let config = GaConfig::default();
    c.bench_function("ga_20_models_window_24", |b| {
        b.iter(|| ga_optimize(black_box(&window), &actuals, &config).unwrap())
    });
}

fn bench_ppo_update(c: &mut Criterion) {
    let env = clustered_env(&scenario("west"), 8);
    let config = PpoConfig {
        total_updates: 1,
        ..Default::default()
    };
    let mut group = c.benchmark_group("ppo");
    group.sample_size(10);
    group.bench_function("one_update_k8", |b| b.iter(|| ppo_train(black_box(&env), &config).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_matrix, bench_kmeans, bench_ga, bench_ppo_update);
criterion_main!(benches);
