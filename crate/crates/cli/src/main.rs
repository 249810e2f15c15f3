use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use metaens_core::cluster::{cluster_learners, select_k};
use metaens_core::drift::label_drift;
use metaens_core::ensemble::run_average_forecaster;
use metaens_core::pipeline::{
    attach_truth, exit_code, predictions_csv, read_predictions_csv, run_experiment, write_atomic, write_report,
    EvalContext, ExperimentConfig, Method,
};
use metaens_core::pool::{build_forecast_matrix, enumerate_specs, ForecastMatrix, PoolConfig};
use metaens_core::rl::{run_foodrl, ClusterChoice, RlRunSpec};
use metaens_core::series::{labels_csv, load_series, split_train_test, DonationSeries, Frequency};
use metaens_core::synth::{benchmark_suite, generate, scenario_names, suite_scenario};
use metaens_core::{Error, Result};

#[derive(Parser)]
#[command(name = "metaens", version, about = "Ensemble forecasting of food-bank donations")]
struct Cli {
    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated subset of SA,GA,RL,FoodRL.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write benchmark scenarios as series and regime CSVs.
    Generate {
        /// Scenario name, or `all`.
        #[arg(long, default_value = "all")]
        scenario: String,
        /// Replace the scenario's stored seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the forecast matrix of the base pool.
    Matrix {
        #[command(flatten)]
        source: SeriesSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster learners on the training part of a forecast matrix.
    Cluster {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        test_periods: usize,
        /// Fixed cluster count; otherwise chosen by silhouette.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "2,3,4,5,6,8,10,12")]
        candidates: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one PPO ensembler and roll it over the test split.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// RL or FoodRL.
        #[arg(long, default_value = "FoodRL")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a report from prediction files.
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "monthly")]
        frequency: String,
        /// `period,regime` ground truth to add a second regime table.
        #[arg(long)]
        regimes: Option<PathBuf>,
        #[arg(long)]
        test_periods: usize,
        /// Adds SA computed from this forecast matrix.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// `NAME=PATH` of a `period,prediction` CSV; repeat the name for more seeds.
        #[arg(long = "predictions")]
        predictions: Vec<String>,
        #[arg(long, default_value_t = 0)]
        drift_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every step of a series with a drift regime.
    Drift {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "monthly")]
        frequency: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SeriesSource {
    /// Experiment config supplying the data source and pool.
    #[arg(long, conflicts_with = "input")]
    config: Option<PathBuf>,
    /// `period,value` CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "monthly")]
    frequency: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<u8> {
    match command {
        Command::Run {
            config,
            methods,
            seeds,
            out,
        } => {
            let mut c = ExperimentConfig::load(&config)?;
            if let Some(m) = methods {
                c.methods = m.iter().map(|s| s.parse()).collect::<Result<_>>()?;
            }
            if let Some(s) = seeds {
                c.seeds = s;
            }
            if let Some(o) = out {
                c.out = o;
            }
            let outcome = run_experiment(&c)?;
            for f in &outcome.report.failures {
                eprintln!("{} failed on seed {}: {}", f.method, f.seed, f.error);
            }
            println!("{}", outcome.run_dir.display());
            Ok(outcome.exit_code() as u8)
        }
        Command::Generate { scenario, seed, out } => {
            let names: Vec<String> = if scenario == "all" {
                scenario_names().into_iter().map(String::from).collect()
            } else {
                vec![scenario]
            };
            let suite = seed.map(benchmark_suite).transpose()?;
            for name in names {
                let config = match &suite {
                    Some(s) => s
                        .get(&name)
                        .cloned()
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{name}`")))?,
                    None => suite_scenario(&name)?,
                };
                let series = generate(&config)?;
                write_atomic(&out.join(format!("{name}.csv")), series.to_csv().as_bytes())?;
                if let Some(r) = series.regimes_csv() {
                    write_atomic(&out.join(format!("{name}_regimes.csv")), r.as_bytes())?;
                }
                write_atomic(&out.join(format!("{name}.toml")), config.to_toml()?.as_bytes())?;
                info!("wrote scenario {name} ({} steps)", series.len());
            }
            Ok(0)
        }
        Command::Matrix { source, out } => {
            let (series, pool) = resolve_source(&source)?;
            let specs = enumerate_specs(&pool)?;
            let matrix = build_forecast_matrix(&series, &specs, &pool.settings)?;
            write_atomic(&out, matrix.to_csv().as_bytes())?;
            Ok(0)
        }
        Command::Cluster {
            matrix,
            test_periods,
            k,
            candidates,
            seed,
            out,
        } => {
            let m = read_matrix(&matrix)?;
            if test_periods == 0 || test_periods >= m.n_steps() {
                return Err(Error::InvalidArgument(format!(
                    "test_periods {test_periods} must lie in 1..{}",
                    m.n_steps()
                )));
            }
            let train = m.head(m.n_steps() - test_periods);
            let k = match k {
                Some(k) => k,
                None => select_k(&train, &candidates, seed)?,
            };
            let assignment = cluster_learners(&train, k, seed)?;
            let names: Vec<String> = m.specs().iter().map(|s| s.name()).collect();
            write_atomic(&out, assignment.to_json(&names)?.as_bytes())?;
            Ok(0)
        }
        Command::Train {
            config,
            method,
            seed,
            out,
        } => {
            let c = ExperimentConfig::load(&config)?;
            c.validate()?;
            let method: Method = method.parse()?;
            let clusters = match method {
                Method::Rl => ClusterChoice::None,
                Method::FoodRl => c.cluster_choice(),
                other => return Err(Error::InvalidArgument(format!("train supports RL and FoodRL, not {other}"))),
            };
            let series = c.load_series()?;
            let pool = c.pool.resolve(series.frequency());
            let matrix = build_forecast_matrix(&series, &enumerate_specs(&pool)?, &pool.settings)?;
            let spec = RlRunSpec {
                test_periods: c.data.test_periods,
                clusters,
                feature_windows: c.features.windows.clone(),
                ppo: c.ppo.clone(),
                seed,
            };
            let run = run_foodrl(&series, &matrix, &spec)?;
            let split = split_train_test(&series, c.data.test_periods)?;
            write_atomic(&out.join(format!("{method}.policy")), &run.trained.policy.to_bytes()?)?;
            write_atomic(
                &out.join(format!("{method}_rewards.csv")),
                run.trained.reward_curve_csv().as_bytes(),
            )?;
            write_atomic(
                &out.join(format!("{method}.csv")),
                predictions_csv(split.test.periods(), &run.predictions).as_bytes(),
            )?;
            Ok(0)
        }
        Command::Evaluate {
            input,
            frequency,
            regimes,
            test_periods,
            matrix,
            predictions,
            drift_seed,
            out,
        } => {
            let mut series = load_series(&input, parse_frequency(&frequency)?)?;
            if let Some(path) = regimes {
                series = attach_truth(series, &read_text(&path)?, &path.display().to_string())?;
            }
            let ctx = EvalContext::new(&series, test_periods, drift_seed)?;
            let mut methods: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            if let Some(path) = matrix {
                let m = read_matrix(&path)?;
                let n = series.len();
                methods
                    .entry(Method::Sa.to_string())
                    .or_default()
                    .push(run_average_forecaster(&m, n - test_periods..n)?);
            }
            for arg in &predictions {
                let (name, path) = arg
                    .split_once('=')
                    .ok_or_else(|| Error::InvalidArgument(format!("--predictions expects NAME=PATH, got `{arg}`")))?;
                let rows = read_predictions_csv(&read_text(Path::new(path))?, path)?;
                if rows.len() != ctx.test_periods.len() || rows.iter().zip(&ctx.test_periods).any(|((p, _), q)| p != q) {
                    return Err(Error::Validation(format!("{path}: periods do not match the test split")));
                }
                methods
                    .entry(name.to_string())
                    .or_default()
                    .push(rows.into_iter().map(|(_, v)| v).collect());
            }
            if methods.is_empty() {
                return Err(Error::InvalidArgument("nothing to evaluate: pass --matrix or --predictions".into()));
            }
            let report = ctx.report(methods, Vec::new())?;
            write_report(&out, &report)?;
            Ok(0)
        }
        Command::Drift {
            input,
            frequency,
            seed,
            out,
        } => {
            let series = load_series(&input, parse_frequency(&frequency)?)?;
            let labels = label_drift(&series, seed)?;
            let text = labels_csv(series.periods(), &labels);
            match out {
                Some(path) => write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}

fn parse_frequency(s: &str) -> Result<Frequency> {
    s.parse()
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_matrix(path: &Path) -> Result<ForecastMatrix> {
    ForecastMatrix::from_csv(&read_text(path)?, &path.display().to_string())
}

fn resolve_source(source: &SeriesSource) -> Result<(DonationSeries, PoolConfig)> {
    match (&source.config, &source.input) {
        (Some(config), _) => {
            let c = ExperimentConfig::load(config)?;
            c.validate()?;
            let series = c.load_series()?;
            let pool = c.pool.resolve(series.frequency());
            Ok((series, pool))
        }
        (None, Some(input)) => {
            let frequency = parse_frequency(&source.frequency)?;
            let series = load_series(input, frequency)?;
            Ok((series, PoolConfig::for_frequency(frequency)))
        }
        (None, None) => Err(Error::InvalidArgument("matrix needs --config or --input".into())),
    }
}
