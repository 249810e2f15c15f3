//! Acceptance checks, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Pass criterion numbers as
//! arguments to run a subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use metaens_core::cluster::{aggregate_clusters, cluster_learners, kmeans};
use metaens_core::ensemble::{apply_weights, average_weights, ga_optimize, run_average_forecaster, run_ga_forecaster, GaConfig};
use metaens_core::eval::{self, annualized_meals, meals_equivalent, summarize, wilcoxon_normal_approx, wilcoxon_signed_rank, RunResults};
use metaens_core::features::{build_feature_table, default_windows};
use metaens_core::pipeline::{run_experiment, ExperimentConfig, Method};
use metaens_core::pool::{build_forecast_matrix, enumerate_specs, ForecastMatrix, ModelSpec, ModelType, PoolConfig, TrainLength, WindowStrategy};
use metaens_core::rl::{
    policy_weights, ppo_loss, ppo_train, rollout_deterministic, EnsembleEnv, EnvData, Policy, PpoBatch, PpoConfig,
    RlState, Sampling, SlotMode,
};
use metaens_core::series::{DonationSeries, Period};
use metaens_core::stats::{derive_seed, median};
use metaens_core::synth::{generate, suite_scenario};

type Outcome = std::result::Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/experiments")
}

fn on_simplex(w: &[f64]) -> bool {
    w.iter().all(|v| (0.0..=1.0).contains(v)) && (w.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

// 1 ----------------------------------------------------------------------

fn simplex_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0usize;
    let mut check = |w: &[f64], origin: &str| -> std::result::Result<(), String> {
        checked += 1;
        ensure(on_simplex(w), || format!("{origin} emitted {w:?}"))
    };

    for k in 1..=2000 {
        check(average_weights(k % 97 + 1).unwrap().as_slice(), "SA")?;
    }

    for seed in 0..400 {
        let k = rng.random_range(1..6);
        let steps = rng.random_range(1..12);
        let actuals: Vec<f64> = (0..steps).map(|_| rng.random_range(1.0..100.0)).collect();
        let window: Vec<Vec<f64>> = actuals
            .iter()
            .map(|y| (0..k).map(|_| y * rng.random_range(0.5..1.5)).collect())
            .collect();
        let config = GaConfig {
            generations: 5,
            population_size: 10,
            seed,
            ..Default::default()
        };
        check(ga_optimize(&window, &actuals, &config).unwrap().weights.as_slice(), "GA")?;
    }
    let (series, matrix) = west_inputs();
    let n = series.len();
    let config = GaConfig {
        generations: 3,
        population_size: 8,
        ..Default::default()
    };
    let ga = run_ga_forecaster(series.values(), &matrix, n - 100..n, &config).unwrap();
    for step in &ga.weights {
        let w: Vec<f64> = step.iter().map(|(_, w)| *w).collect();
        check(&w, "GA forecaster")?;
    }

    let ppo = PpoConfig {
        hidden_layers: vec![8],
        ..Default::default()
    };
    for p in 0..40u64 {
        let feat_dim = rng.random_range(1..20);
        let act_dim = rng.random_range(1..40);
        let mut policy = Policy::new(feat_dim + 2 * act_dim, act_dim, &ppo, p, &mut rng);
        let spread = rng.random_range(0.1..20.0);
        for v in &mut policy.params {
            *v *= spread;
        }
        let mut previous = average_weights(act_dim).unwrap().as_slice().to_vec();
        for i in 0..200 {
            let state = RlState {
                step: i,
                features: (0..feat_dim).map(|_| rng.random_range(-50.0..50.0)).collect(),
                predictions: (0..act_dim).map(|_| rng.random_range(0.0..5.0)).collect(),
                previous_weights: previous.clone(),
                mask: None,
            };
            let mask: Option<Vec<bool>> = (i % 3 == 2).then(|| {
                let mut m: Vec<bool> = (0..act_dim).map(|_| rng.random::<bool>()).collect();
                let keep = rng.random_range(0..act_dim);
                m[keep] = true;
                m
            });
            let w = if i % 2 == 0 {
                policy_weights(&policy, &state, mask.as_deref(), Sampling::Deterministic)
            } else {
                policy_weights(&policy, &state, mask.as_deref(), Sampling::Stochastic(&mut rng))
            }
            .map_err(|e| e.to_string())?;
            if let Some(m) = &mask {
                ensure(w.as_slice().iter().zip(m).all(|(v, keep)| *keep || *v == 0.0), || {
                    "masked slot received weight".into()
                })?;
            }
            check(w.as_slice(), "policy")?;
            previous = w.as_slice().to_vec();
        }
    }
    ensure(checked >= 10_000, || format!("only {checked} vectors checked"))?;
    Ok(format!("{checked} weight vectors on the simplex"))
}

// 2 ----------------------------------------------------------------------

fn west_inputs() -> (DonationSeries, ForecastMatrix) {
    let series = generate(&suite_scenario("west").unwrap()).unwrap();
    let matrix = default_matrix(&series);
    (series, matrix)
}

fn default_matrix(series: &DonationSeries) -> ForecastMatrix {
    let pool = PoolConfig::for_frequency(series.frequency());
    build_forecast_matrix(series, &enumerate_specs(&pool).unwrap(), &pool.settings).unwrap()
}

fn mutate_from(series: &DonationSeries, t: usize, seed: u64) -> DonationSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = series
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| if i >= t { v * rng.random_range(0.2..3.0) } else { *v })
        .collect();
    series.with_values(values).unwrap()
}

fn frozen_predictions(
    series: &DonationSeries,
    matrix: &ForecastMatrix,
    assignment: Option<&metaens_core::cluster::ClusterAssignment>,
    policy: &Policy,
    n_train: usize,
) -> Vec<(usize, f64)> {
    let features = build_feature_table(series, &default_windows(series.frequency())).unwrap();
    let data = match assignment {
        Some(a) => EnvData::clustered(series, &features, &aggregate_clusters(matrix, a).unwrap(), n_train).unwrap(),
        None => EnvData::plain(series, &features, matrix, n_train).unwrap(),
    };
    let env = EnsembleEnv::new(Arc::new(data), 0..series.len()).unwrap();
    rollout_deterministic(policy, &env)
        .unwrap()
        .into_iter()
        .map(|(s, p, _)| (s, p))
        .collect()
}

fn no_leakage() -> Outcome {
    let (series, matrix) = west_inputs();
    let n = series.len();
    let n_train = n - 24;
    let windows = default_windows(series.frequency());
    let features = build_feature_table(&series, &windows).unwrap();

    // frozen policies and assignment, trained on the unmodified series
    let ppo = PpoConfig {
        hidden_layers: vec![16],
        total_updates: 3,
        seed: 5,
        ..Default::default()
    };
    let assignment = cluster_learners(&matrix.head(n_train), 4, 9).unwrap();
    let clustered = EnvData::clustered(&series, &features, &aggregate_clusters(&matrix, &assignment).unwrap(), n_train).unwrap();
    let food = ppo_train(&EnsembleEnv::new(Arc::new(clustered), 0..n_train).unwrap(), &ppo).unwrap().policy;
    let plain = EnvData::plain(&series, &features, &matrix, n_train).unwrap();
    let rl = ppo_train(&EnsembleEnv::new(Arc::new(plain), 0..n_train).unwrap(), &ppo).unwrap().policy;
    let base_food = frozen_predictions(&series, &matrix, Some(&assignment), &food, n_train);
    let base_rl = frozen_predictions(&series, &matrix, None, &rl, n_train);

    let cuts = [40, n_train - 3, n_train + 1, n_train + 12, n - 1];
    for (i, &t) in cuts.iter().enumerate() {
        let mutated = mutate_from(&series, t, i as u64);
        let f2 = build_feature_table(&mutated, &windows).unwrap();
        for s in 0..=t {
            ensure(features.rows[s] == f2.rows[s], || format!("feature row {s} changed after mutating from {t}"))?;
        }
        let m2 = default_matrix(&mutated);
        for s in 0..=t {
            ensure(matrix.row(s) == m2.row(s), || format!("matrix row {s} changed after mutating from {t}"))?;
        }
        // policy inputs are standardized on the training split, so (c) covers test-window cuts
        if t >= n_train {
            for (name, base, got) in [
                ("FoodRL", &base_food, frozen_predictions(&mutated, &m2, Some(&assignment), &food, n_train)),
                ("RL", &base_rl, frozen_predictions(&mutated, &m2, None, &rl, n_train)),
            ] {
                for ((s, a), (s2, b)) in base.iter().zip(&got) {
                    if *s < t {
                        ensure(s == s2 && a.to_bits() == b.to_bits(), || {
                            format!("{name} prediction at step {s} changed after mutating from {t}")
                        })?;
                    }
                }
            }
        }
    }
    Ok(format!("features, matrix and frozen policies unchanged before cuts {cuts:?}"))
}

// 3 ----------------------------------------------------------------------

fn window_mae(window: &[Vec<f64>], actuals: &[f64], w: &[f64]) -> f64 {
    let preds: Vec<f64> = window.iter().map(|r| r.iter().zip(w).map(|(p, w)| p * w).sum()).collect();
    eval::mae(&preds, actuals).unwrap()
}

fn ga_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let actuals: Vec<f64> = (0..24).map(|_| rng.random_range(0.5..1.5)).collect();
        let window: Vec<Vec<f64>> = actuals
            .iter()
            .map(|y| vec![y + rng.random_range(-0.05..0.15), y + rng.random_range(-0.15..0.05)])
            .collect();
        let grid = (0..=100)
            .map(|i| {
                let a = i as f64 / 100.0;
                window_mae(&window, &actuals, &[a, 1.0 - a])
            })
            .fold(f64::INFINITY, f64::min);
        let out = ga_optimize(&window, &actuals, &GaConfig { seed, ..Default::default() }).unwrap();
        let gap = (-out.best_fitness - grid).abs();
        worst = worst.max(gap);
        ensure(gap <= 1e-3, || format!("seed {seed}: GA MAE {} vs grid {grid}", -out.best_fitness))?;
    }

    let actuals: Vec<f64> = (0..24).map(|i| 5000.0 + 400.0 * (i as f64 * 0.9).sin()).collect();
    let window: Vec<Vec<f64>> = actuals.iter().map(|y| vec![*y, y + 1000.0]).collect();
    let equal = window_mae(&window, &actuals, &[0.5, 0.5]);
    let mut min_w: f64 = 1.0;
    for seed in 0..10 {
        let out = ga_optimize(&window, &actuals, &GaConfig { seed, ..Default::default() }).unwrap();
        min_w = min_w.min(out.weights.as_slice()[0]);
        ensure(-out.best_fitness <= equal, || format!("seed {seed}: GA MAE above equal weights"))?;
    }
    ensure(min_w >= 0.95, || format!("dominant model weight {min_w}"))?;
    Ok(format!("max |GA - grid| = {worst:.2e} over 10 seeds; dominant weight >= {min_w:.4}"))
}

// 4 ----------------------------------------------------------------------

fn inertia_of(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for c in 0..2 {
        let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
        let dim = points[0].len();
        let centroid: Vec<f64> = (0..dim)
            .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members
            .iter()
            .map(|p| p.iter().zip(&centroid).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

fn kmeans_oracle() -> Outcome {
    let mut optimal = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let centers = [
            [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
            [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        ];
        let points: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let c = centers[i % 2];
                vec![c[0] + rng.random_range(-1.5..1.5), c[1] + rng.random_range(-1.5..1.5)]
            })
            .collect();
        let best = (1u32..255)
            .map(|mask| {
                let labels: Vec<usize> = (0..8).map(|i| ((mask >> i) & 1) as usize).collect();
                inertia_of(&points, &labels)
            })
            .fold(f64::INFINITY, f64::min);
        let got = kmeans(&points, 2, seed, 100).unwrap().inertia;
        ensure(got >= best - 1e-9 * best.max(1.0), || format!("seed {seed}: inertia {got} below optimum {best}"))?;
        if (got - best).abs() <= 1e-9 * best.max(1.0) {
            optimal += 1;
        }
    }
    ensure(optimal >= 40, || format!("optimal on {optimal}/50 seeds"))?;

    // duplicated learners
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = 30;
        let base: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..steps).map(|_| rng.random_range(50.0..150.0)).collect())
            .collect();
        // columns 6 and 7 repeat 0 and 3
        let cols: Vec<&Vec<f64>> = base.iter().chain([&base[0], &base[3]]).collect();
        let specs: Vec<ModelSpec> = (0..cols.len())
            .map(|i| ModelSpec::new(ModelType::MovingAverage, TrainLength::Periods(i + 1), WindowStrategy::Sliding))
            .collect();
        let rows = (0..steps).map(|t| cols.iter().map(|c| Some(c[t])).collect()).collect();
        let m = ForecastMatrix::new(specs, Period::month(2000, 1).unwrap().sequence(steps), rows).unwrap();
        for k in 2..=5 {
            let a = cluster_learners(&m, k, seed).unwrap();
            ensure(a.assignment[0] == a.assignment[6] && a.assignment[3] == a.assignment[7], || {
                format!("seed {seed}, k {k}: duplicates split {:?}", a.assignment)
            })?;
        }
    }
    Ok(format!("optimal on {optimal}/50 seeds, never below; duplicates always co-clustered"))
}

// 5 ----------------------------------------------------------------------

fn gradient_check() -> std::result::Result<f64, String> {
    let config = PpoConfig {
        hidden_layers: vec![6, 5],
        entropy_coeff: 0.05,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut policy = Policy::new(5, 3, &config, 21, &mut rng);
    for p in &mut policy.params {
        *p *= 2.0;
    }
    let mut batch = PpoBatch::default();
    for i in 0..6 {
        let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask = (i == 2).then(|| vec![true, false, true]);
        let mean = policy.mean_logits(&obs);
        let (raw, _) = policy.act(&obs, mask.as_deref(), Sampling::Stochastic(&mut rng));
        let lp = policy.log_prob(&mean, &raw, mask.as_deref());
        batch.observations.push(obs);
        batch.masks.push(mask);
        batch.actions.push(raw);
        batch.old_log_probs.push(lp + [0.0, 0.6, -0.5][i % 3]);
        batch.advantages.push([1.1, -0.8, 0.3][i % 3]);
        batch.returns.push(rng.random_range(-1.0..1.0));
    }
    let (_, grad) = ppo_loss(&policy, &batch, &config);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..policy.params.len() {
        let mut p = policy.clone();
        p.params[i] += h;
        let up = ppo_loss(&p, &batch, &config).0;
        p.params[i] -= 2.0 * h;
        let down = ppo_loss(&p, &batch, &config).0;
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure(worst <= 1e-4, || format!("gradient relative error {worst:.2e}"))?;
    Ok(worst)
}

const EXACT_SLOT: usize = 1;

fn rigged_env() -> EnsembleEnv {
    let steps = 48;
    let periods = Period::month(2010, 1).unwrap().sequence(steps);
    let actuals: Vec<f64> = (0..steps)
        .map(|t| 1000.0 + 150.0 * (t as f64 * std::f64::consts::TAU / 12.0).sin() + 3.0 * t as f64)
        .collect();
    let mut biases = [0.20, -0.15, 0.25, 0.10];
    biases[EXACT_SLOT] = 0.0;
    let cells: Vec<Vec<Option<f64>>> = actuals.iter().map(|y| biases.iter().map(|b| Some(y * (1.0 + b))).collect()).collect();
    let features: Vec<Vec<f64>> = (0..steps)
        .map(|t| vec![(t as f64 * 0.5).sin(), (t as f64 * 0.5).cos()])
        .collect();
    let names = (0..biases.len()).map(|j| format!("cluster_{j}")).collect();
    let mean = actuals.iter().sum::<f64>() / steps as f64;
    let data = EnvData::from_cells(periods, actuals, features, &cells, SlotMode::CarryForward, mean, names).unwrap();
    EnsembleEnv::new(Arc::new(data), 0..steps).unwrap()
}

/// Deterministic rollout MAPE and mean weight on the exact slot.
fn rollout_mape(policy: &Policy, env: &EnsembleEnv) -> (f64, f64) {
    let actuals = &env.data().actuals;
    let steps = rollout_deterministic(policy, env).unwrap();
    let preds: Vec<f64> = steps.iter().map(|(_, p, _)| *p).collect();
    let ys: Vec<f64> = steps.iter().map(|(s, _, _)| actuals[*s]).collect();
    let exact = steps.iter().map(|(_, _, w)| w.as_slice()[EXACT_SLOT]).sum::<f64>() / steps.len() as f64;
    (eval::mape(&preds, &ys).unwrap(), exact)
}

fn ppo_correctness() -> Outcome {
    let worst = gradient_check()?;
    let env = rigged_env();
    let mut lines = Vec::new();
    let mut passed = 0;
    for seed in 1..=5u64 {
        let config = PpoConfig {
            hidden_layers: vec![32, 32],
            learning_rate: 3e-3,
            total_updates: 150,
            seed,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
        let init = Policy::new(env.data().obs_dim(), env.data().width(), &config, seed, &mut rng);
        let (before, _) = rollout_mape(&init, &env);
        let (after, weight) = rollout_mape(&ppo_train(&env, &config).map_err(|e| e.to_string())?.policy, &env);
        if before >= 5.0 && after <= 2.0 && weight >= 0.8 {
            passed += 1;
        }
        lines.push(format!("{before:.2}->{after:.2} (w {weight:.2})"));
    }
    ensure(passed >= 4, || format!("rigged env solved on {passed}/5 seeds: {}", lines.join(", ")))?;
    Ok(format!(
        "gradient rel err {worst:.1e}; rigged MAPE % {} ({passed}/5)",
        lines.join(", ")
    ))
}

// 6 ----------------------------------------------------------------------

fn west_ordering() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut config = ExperimentConfig::load(configs_dir().join("west.toml")).map_err(|e| e.to_string())?;
    config.out = dir.path().to_path_buf();
    ensure(config.seeds.len() == 5, || format!("west config has {} seeds", config.seeds.len()))?;
    for m in [Method::Sa, Method::Rl, Method::FoodRl] {
        ensure(config.methods.contains(&m), || format!("west config lacks {m}"))?;
    }
    let series = config.load_series().map_err(|e| e.to_string())?;
    let outcome = run_experiment(&config).map_err(|e| e.to_string())?;
    ensure(outcome.report.failures.is_empty(), || format!("failures: {:?}", outcome.report.failures))?;

    let n = series.len();
    let start = n - config.data.test_periods;
    let truth = series.regime_truth().ok_or("west series carries no truth labels")?;
    let decline: Vec<usize> = (start..n).filter(|&t| truth[t].is_decline()).map(|t| t - start).collect();
    ensure(!decline.is_empty(), || "no decline steps in the test window".into())?;
    let actual: Vec<f64> = decline.iter().map(|&i| series.values()[start + i]).collect();
    let median_of = |name: &str, steps: Option<&[usize]>| -> f64 {
        let per_seed: Vec<f64> = outcome.predictions[name]
            .iter()
            .map(|p| match steps {
                Some(idx) => eval::mape(&idx.iter().map(|&i| p[i]).collect::<Vec<_>>(), &actual).unwrap(),
                None => eval::mape(p, &series.values()[start..]).unwrap(),
            })
            .collect();
        median(&per_seed)
    };
    let food_decline = median_of("FoodRL", Some(&decline));
    let sa_decline = median_of("SA", Some(&decline));
    let food = median_of("FoodRL", None);
    let rl = median_of("RL", None);
    let summary = format!(
        "decline steps ({}): FoodRL {food_decline:.2} vs SA {sa_decline:.2}; overall: FoodRL {food:.2} vs RL {rl:.2}",
        decline.len()
    );
    ensure(food_decline <= sa_decline && food <= rl, || summary.clone())?;
    Ok(summary)
}

// 7 ----------------------------------------------------------------------

fn brute_force_p(diffs: &[f64]) -> f64 {
    let n = diffs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|a, b| diffs[*a].abs().total_cmp(&diffs[*b].abs()));
    let mut ranks = vec![0.0; n];
    for (r, i) in idx.iter().enumerate() {
        ranks[*i] = r as f64 + 1.0;
    }
    let plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w = plus.min(total - plus);
    let mut extreme = 0u64;
    for signs in 0u64..(1 << n) {
        let t: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if t.min(total - t) <= w {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

fn metric_oracles() -> Outcome {
    ensure(eval::mae(&[110.0, 90.0], &[100.0, 100.0]).unwrap() == 10.0, || "MAE example".into())?;
    ensure(eval::mae(&[100.0], &[50.0]).unwrap() == 50.0, || "MAE example".into())?;
    ensure(eval::mape(&[110.0], &[100.0]).unwrap() == 10.0, || "MAPE example".into())?;
    ensure(eval::mape(&[50.0, 150.0], &[100.0, 100.0]).unwrap() == 50.0, || "MAPE example".into())?;
    ensure(eval::mape(&[3.0, 4.0], &[3.0, 4.0]).unwrap() == 0.0, || "MAPE example".into())?;

    let a = [1.0, 2.0, 3.0, 4.0, 5.0];
    let b = [1.5, 3.0, 4.5, 6.0, 7.5];
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let oracle = brute_force_p(&diffs);
    let exact = wilcoxon_signed_rank(&a, &b).unwrap();
    ensure(exact.exact && exact.p_value == oracle && oracle == 0.0625, || {
        format!("n=5 exact p {} vs enumeration {oracle}", exact.p_value)
    })?;

    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = rng.random_range(-0.5..0.5);
        let x: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + shift + rng.random_range(-1.0..1.0)).collect();
        let e = wilcoxon_signed_rank(&x, &y).unwrap();
        let z = wilcoxon_normal_approx(&x, &y).unwrap();
        ensure(e.exact && e.n == 20, || "n=20 did not take the exact path".into())?;
        worst = worst.max((e.p_value - z.p_value).abs());
        if seed < 3 {
            let diffs: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let oracle = brute_force_p(&diffs);
            ensure((e.p_value - oracle).abs() < 1e-12, || format!("n=20 exact {} vs enumeration {oracle}", e.p_value))?;
        }
    }
    ensure(worst <= 0.01, || format!("exact vs normal differ by {worst}"))?;
    Ok(format!("metrics exact; n=5 p = {oracle}; n=20 max |exact - normal| = {worst:.4}"))
}

// 8 ----------------------------------------------------------------------

fn sa_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut steps_checked = 0;
    for _ in 0..50 {
        let k = rng.random_range(1..30);
        let steps = rng.random_range(1..40);
        let specs: Vec<ModelSpec> = (0..k)
            .map(|i| ModelSpec::new(ModelType::MovingAverage, TrainLength::Periods(i + 1), WindowStrategy::Sliding))
            .collect();
        let rows: Vec<Vec<Option<f64>>> = (0..steps)
            .map(|_| (0..k).map(|_| (rng.random::<f64>() < 0.8).then(|| rng.random_range(0.0..1e6))).collect())
            .collect();
        let m = ForecastMatrix::new(specs, Period::month(2000, 1).unwrap().sequence(steps), rows).unwrap();
        let covered: Vec<usize> = (0..steps).filter(|&t| m.available_count(t) > 0).collect();
        for &t in &covered {
            let avail = m.available(t);
            let via_weights = apply_weights(&avail, &average_weights(avail.len()).unwrap()).unwrap();
            let mean = avail.iter().sum::<f64>() / avail.len() as f64;
            let scale = avail.iter().map(|v| v.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            ensure((via_weights - mean).abs() <= 1e-12 * scale, || format!("step {t}: {via_weights} vs {mean}"))?;
            let plain = run_average_forecaster(&m, t..t + 1).unwrap()[0];
            ensure((plain - mean).abs() <= 1e-12 * scale, || format!("SA forecaster step {t}: {plain} vs {mean}"))?;
            steps_checked += 1;
        }
        let singletons = metaens_core::cluster::ClusterAssignment::singletons(k);
        let clustered = aggregate_clusters(&m, &singletons).unwrap();
        let cm = ForecastMatrix::new(m.specs().to_vec(), m.periods().to_vec(), clustered.entries.clone()).unwrap();
        for &t in &covered {
            let a = run_average_forecaster(&m, t..t + 1).unwrap()[0];
            let b = run_average_forecaster(&cm, t..t + 1).unwrap()[0];
            ensure(a.to_bits() == b.to_bits(), || format!("singleton clusters changed SA at step {t}"))?;
        }
    }
    Ok(format!("{steps_checked} steps within 1e-12; singleton clustering bit-identical"))
}

// 9 ----------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut config = ExperimentConfig::load(configs_dir().join("east.toml")).map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        config.out = dir.path().to_path_buf();
        let outcome = run_experiment(&config).map_err(|e| e.to_string())?;
        let read = |f: &str| std::fs::read(outcome.run_dir.join(f)).map_err(|e| format!("{f}: {e}"));
        reports.push((read("report.json")?, read("report.md")?));
    }
    ensure(reports[0] == reports[1], || "reports differ between runs".into())?;
    Ok(format!(
        "report.json ({} bytes) and report.md identical across two runs",
        reports[0].0.len()
    ))
}

// 10 ---------------------------------------------------------------------

fn meals() -> Outcome {
    ensure(meals_equivalent(1_200_000.0) == 1_000_000.0, || "1.2e6 lb".into())?;
    let mut run = RunResults {
        periods: Period::month(2021, 1).unwrap().sequence(3),
        actuals: vec![100.0, 200.0, 300.0],
        periods_per_year: 12,
        reference: "SA".into(),
        ..Default::default()
    };
    run.methods.insert("SA".into(), vec![vec![130.0, 170.0, 330.0]]);
    run.methods.insert("X".into(), vec![vec![110.0, 190.0, 300.0], vec![100.0, 210.0, 310.0]]);
    let report = summarize(&run).unwrap();
    // hand-computed: SA MAE 30, X MAE (10+10+0+0+10+10)/6 = 20/3
    let expected = (30.0 - 20.0 / 3.0) * 12.0 / 1.2;
    let got = report.meals_vs_reference["X"];
    ensure((got - expected).abs() <= 1e-9 * expected, || format!("annualized meals {got} vs {expected}"))?;
    ensure(got == annualized_meals(report.methods["SA"].mae_mean, report.methods["X"].mae_mean, 12), || {
        "summary does not use annualized_meals".into()
    })?;
    ensure(report.meals_vs_reference["SA"] == 0.0, || "reference gains meals over itself".into())?;
    Ok(format!("1,200,000 lb = 1,000,000 meals; annualized gain {got:.1}"))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "simplex invariants", budget: Duration::from_secs(60), run: simplex_invariants },
        Criterion { id: 2, name: "no leakage", budget: Duration::from_secs(60), run: no_leakage },
        Criterion { id: 3, name: "GA grid oracle", budget: Duration::from_secs(120), run: ga_oracle },
        Criterion { id: 4, name: "k-means oracle", budget: Duration::from_secs(60), run: kmeans_oracle },
        Criterion { id: 5, name: "PPO correctness", budget: Duration::from_secs(600), run: ppo_correctness },
        Criterion { id: 6, name: "west ordering", budget: Duration::from_secs(1800), run: west_ordering },
        Criterion { id: 7, name: "metric and test oracles", budget: Duration::from_secs(60), run: metric_oracles },
        Criterion { id: 8, name: "SA equivalence", budget: Duration::from_secs(60), run: sa_equivalence },
        Criterion { id: 9, name: "determinism", budget: Duration::from_secs(900), run: determinism },
        Criterion { id: 10, name: "meals conversion", budget: Duration::from_secs(1), run: meals },
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut results = BTreeMap::new();
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} budget", c.budget)),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {:>2} {:<24} {:>8.1}s  {detail}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        results.insert(c.id, ok);
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
