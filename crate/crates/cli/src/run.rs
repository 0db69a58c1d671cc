//! Subcommand bodies.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use capcoord::backtest::{
    backtest as run_backtest, read_report_rows, summarize, write_report_csv, BacktestSetup,
    Contender, EvalReport,
};
use capcoord::capacity::{read_paths_csv, sample_capacity_path, write_paths_csv, SamplerConfig};
use capcoord::checkpoint::{self, Checkpoint, Model};
use capcoord::coordinators::{BaseStockPlanner, BoundCoordinator, Mpc, NeuralCoordinator};
use capcoord::idp::{CapacityPath, Coordinator, ExoSeries, Policy, Resource};
use capcoord::policies::{BaseStockPolicy, Bound, NeuralPolicy};
use capcoord::seed;
use capcoord::synth::{generate, mean_weekly_volume, read_population_csv, write_population_csv, Split};
use capcoord::tape::ParamVector;
use capcoord::training::{train_coordinator as fit_coordinator, train_policy, write_metrics_csv, TrainConfig};
use capcoord::{Error, Result};

use crate::config::{PathsConfig, PolicyKind, RunConfig};
use crate::{CliError, SamplePathsArgs};

type CliResult = std::result::Result<(), CliError>;

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn read_data(path: &Path) -> Result<Vec<ExoSeries>> {
    let products = read_population_csv(open(path)?)?;
    if products.is_empty() {
        return Err(Error::Data(format!("{} holds no products", path.display())));
    }
    Ok(products)
}

fn read_paths(path: &Path, horizon: usize) -> Result<Vec<CapacityPath>> {
    let paths = read_paths_csv(open(path)?)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("{} holds no paths", path.display())));
    }
    if let Some(p) = paths.iter().find(|p| p.len() != horizon) {
        return Err(Error::HorizonMismatch {
            expected: horizon,
            found: p.len(),
        });
    }
    Ok(paths)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint::load(path)
}

fn samplers(paths: &PathsConfig, horizon: usize, anchor: Option<f64>) -> (SamplerConfig, Option<SamplerConfig>) {
    let storage = SamplerConfig {
        order: paths.order,
        scale: paths.scale,
        horizon,
        base_level: paths.base_level,
        demand_anchor: anchor,
    };
    let inbound = paths.inbound.as_ref().map(|i| SamplerConfig {
        order: i.order,
        scale: i.scale,
        horizon,
        base_level: i.base_level,
        demand_anchor: anchor,
    });
    (storage, inbound)
}

fn with_seed(cfg: &TrainConfig, master: u64, label: &str) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(master, label),
        ..cfg.clone()
    }
}

fn write_metrics(cfg: &RunConfig, file: Option<&Path>, metrics: &[capcoord::training::IterationMetrics]) -> CliResult {
    if let Some(file) = file {
        write_metrics_csv(metrics, create(&cfg.output(file)?)?)?;
    }
    Ok(())
}

pub fn generate_data(config: &Path, split: Split, out: &Path) -> CliResult {
    let cfg = RunConfig::load(config)?;
    let pop = capcoord::synth::PopulationConfig {
        seed: seed::derive(cfg.seed, "population"),
        ..cfg.data.clone()
    }
    .for_split(split);
    let products = generate(&pop)?;
    write_population_csv(&products, pop.window_start, create(&cfg.output(out)?)?)?;
    Ok(())
}

pub fn sample_paths(args: &SamplePathsArgs) -> CliResult {
    let cfg = RunConfig::load_or_default(args.config.as_deref())?;
    let paths_cfg = PathsConfig {
        order: args.order.unwrap_or(cfg.paths.order),
        scale: args.scale.unwrap_or(cfg.paths.scale),
        base_level: args.base_level.unwrap_or(cfg.paths.base_level),
        count: args.count.unwrap_or(cfg.paths.count),
        ..cfg.paths.clone()
    };
    let anchor = match &args.data {
        Some(d) => Some(mean_weekly_volume(&read_data(d)?)),
        None => None,
    };
    let horizon = args.horizon.unwrap_or(cfg.data.horizon);
    let (storage, inbound) = samplers(&paths_cfg, horizon, anchor);
    let master = args.seed.unwrap_or(cfg.seed);
    let mut rng = seed::rng(seed::derive(master, "paths"));
    let paths = (0..paths_cfg.count)
        .map(|_| sample_capacity_path(&storage, inbound.as_ref(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    write_paths_csv(&paths, create(&cfg.output(&args.out)?)?)?;
    Ok(())
}

fn check_forecast_lengths(cfg: &RunConfig) -> CliResult {
    let l = cfg.policy.neural.forecast_len;
    let checks = [
        ("train.forecast_len", cfg.train.forecast_len),
        ("coordinator.network.forecast_len", cfg.coordinator.network.forecast_len),
        ("coordinator.train.forecast_len", cfg.coordinator.train.forecast_len),
    ];
    for (key, v) in checks {
        if v != l {
            return Err(CliError::Config(format!(
                "{key} = {v} differs from policy.neural.forecast_len = {l}"
            )));
        }
    }
    Ok(())
}

pub fn train(config: &Path, data: &Path, paths: &Path, out: &Path, metrics: Option<&Path>) -> CliResult {
    let cfg = RunConfig::load(config)?;
    check_forecast_lengths(&cfg)?;
    let products = read_data(data)?;
    let paths = read_paths(paths, products[0].horizon())?;
    let ckpt = match cfg.policy.kind {
        PolicyKind::BaseStock => {
            cfg.policy.base_stock.validate()?;
            Checkpoint {
                model: Model::BaseStock {
                    config: cfg.policy.base_stock.clone(),
                },
                params: ParamVector::zeros(&[]),
            }
        }
        PolicyKind::Neural => {
            let net = NeuralPolicy::new(cfg.policy.neural.clone())?;
            let mut rng = seed::rng(seed::derive(cfg.seed, "policy-init"));
            let init = net.mlp.init_params(&mut rng, cfg.policy.init_gain);
            let train_cfg = with_seed(&cfg.train, cfg.seed, "policy-train");
            let res = train_policy(&products, &paths, &net, init, &train_cfg)?;
            write_metrics(&cfg, metrics, &res.metrics)?;
            Checkpoint {
                model: Model::NeuralPolicy {
                    config: cfg.policy.neural.clone(),
                },
                params: res.params,
            }
        }
    };
    checkpoint::save(&cfg.output(out)?, &ckpt)?;
    Ok(())
}

pub fn train_coordinator(config: &Path, data: &Path, policy: &Path, out: &Path, metrics: Option<&Path>) -> CliResult {
    let cfg = RunConfig::load(config)?;
    check_forecast_lengths(&cfg)?;
    let products = read_data(data)?;
    let ckpt = load_checkpoint(policy)?;
    let Model::NeuralPolicy { config: net_cfg } = &ckpt.model else {
        return Err(Error::Data(format!(
            "{} is not a neural policy checkpoint",
            policy.display()
        ))
        .into());
    };
    let net = NeuralPolicy::new(net_cfg.clone())?;
    let coordinator = NeuralCoordinator::new(cfg.coordinator.network.clone())?;
    if net.cfg.forecast_len != coordinator.cfg.forecast_len {
        return Err(Error::Data(format!(
            "policy reads {} forecast weeks but the coordinator announces {}",
            net.cfg.forecast_len, coordinator.cfg.forecast_len
        ))
        .into());
    }
    let anchor = cfg.paths.anchor_to_demand.then(|| mean_weekly_volume(&products));
    let (storage, inbound) = samplers(&cfg.paths, products[0].horizon(), anchor);
    let mut draw = |r: &mut seed::Rng| sample_capacity_path(&storage, inbound.as_ref(), r);
    let mut rng = seed::rng(seed::derive(cfg.seed, "coordinator-init"));
    let init = coordinator.mlp.init_params(&mut rng, cfg.coordinator.init_gain);
    let train_cfg = with_seed(&cfg.coordinator.train, cfg.seed, "coordinator-train");
    let res = fit_coordinator(&products, &mut draw, &net, ckpt.params.values(), &coordinator, init, &train_cfg)?;
    write_metrics(&cfg, metrics, &res.metrics)?;
    let saved = Checkpoint {
        model: Model::NeuralCoordinator {
            config: coordinator.cfg.clone(),
        },
        params: res.params,
    };
    checkpoint::save(&cfg.output(out)?, &saved)?;
    Ok(())
}

/// Policy named in a report, with the parameters it needs bound.
enum LoadedPolicy {
    BaseStock(BaseStockPolicy),
    Neural(NeuralPolicy, Vec<capcoord::tape::Var>),
}

impl LoadedPolicy {
    fn name(&self) -> &'static str {
        match self {
            LoadedPolicy::BaseStock(_) => "base_stock",
            LoadedPolicy::Neural(..) => "rl",
        }
    }

    fn forecast_len(&self) -> Option<usize> {
        match self {
            LoadedPolicy::BaseStock(_) => None,
            LoadedPolicy::Neural(net, _) => Some(net.cfg.forecast_len),
        }
    }
}

enum CoordinatorChoice {
    None,
    Mpc,
    Neural(NeuralCoordinator, Vec<capcoord::tape::Var>),
}

pub fn backtest(config: Option<&Path>, policy: &Path, coordinator: &str, paths: &Path, data: &Path, out: &Path) -> CliResult {
    let cfg = RunConfig::load_or_default(config)?;
    let products = read_data(data)?;
    let paths = read_paths(paths, products[0].horizon())?;
    let ckpt = load_checkpoint(policy)?;
    let loaded = match ckpt.model {
        Model::BaseStock { config } => LoadedPolicy::BaseStock(BaseStockPolicy { cfg: config }),
        Model::NeuralPolicy { config } => {
            LoadedPolicy::Neural(NeuralPolicy::new(config)?, ckpt.params.constants())
        }
        Model::NeuralCoordinator { .. } => {
            return Err(Error::Data(format!("{} holds a coordinator, not a policy", policy.display())).into())
        }
    };
    let choice = match coordinator {
        "none" => CoordinatorChoice::None,
        "mpc" => CoordinatorChoice::Mpc,
        file => {
            let c = load_checkpoint(&PathBuf::from(file))?;
            match c.model {
                Model::NeuralCoordinator { config } => {
                    CoordinatorChoice::Neural(NeuralCoordinator::new(config)?, c.params.constants())
                }
                _ => return Err(Error::Data(format!("{file} is not a coordinator checkpoint")).into()),
            }
        }
    };
    let forecast_len = loaded.forecast_len();
    let search = cfg.mpc.search.clone();
    if let Some(l) = forecast_len {
        if let CoordinatorChoice::Mpc = choice {
            if search.horizon != l + 1 {
                return Err(CliError::Config(format!(
                    "mpc.search.horizon = {} but the policy reads {l} forecast weeks; set it to {}",
                    search.horizon,
                    l + 1
                )));
            }
        }
        if let CoordinatorChoice::Neural(c, _) = &choice {
            if c.cfg.forecast_len != l {
                return Err(Error::Data(format!(
                    "policy reads {l} forecast weeks but the coordinator announces {}",
                    c.cfg.forecast_len
                ))
                .into());
            }
        }
    }
    search.validate()?;

    let bs = BaseStockPolicy {
        cfg: cfg.policy.base_stock.clone(),
    };
    let rl_bound;
    let (policy_ref, rl_ref): (&(dyn Policy + Sync), Option<&(dyn Policy + Sync)>) = match &loaded {
        LoadedPolicy::BaseStock(p) => (p, None),
        LoadedPolicy::Neural(net, theta) => {
            rl_bound = Bound { policy: net, params: theta };
            (&rl_bound, Some(&rl_bound))
        }
    };
    let mpc_seed = seed::derive(cfg.seed, "mpc");
    let mpc = |j: usize| -> Result<Box<dyn Coordinator>> {
        Ok(Box::new(Mpc::new(
            search.clone(),
            BaseStockPlanner {
                cfg: cfg.mpc.planner.clone(),
            },
            cfg.mpc.forecaster,
            seed::derive_indexed(mpc_seed, "path", j as u64),
        )))
    };
    let neural = |_j: usize| -> Result<Box<dyn Coordinator + '_>> {
        match &choice {
            CoordinatorChoice::Neural(c, omega) => Ok(Box::new(BoundCoordinator {
                coordinator: c,
                params: omega,
            })),
            _ => Err(Error::Contract("no neural coordinator loaded".into())),
        }
    };

    let mut report = EvalReport::default();
    for &mode in &cfg.backtest.init_modes {
        let setup = BacktestSetup {
            products: &products,
            init_mode: mode,
            paths: &paths,
            gamma: cfg.backtest.gamma,
            resource: Resource::Storage,
            forecast_len: forecast_len.unwrap_or(0),
            base_stock: &bs,
            unconstrained_rl: rl_ref,
        };
        let mut contenders = vec![Contender {
            policy_name: "base_stock".into(),
            coordinator_name: "none".into(),
            policy: &bs,
            coordinator: None,
        }];
        if rl_ref.is_some() {
            contenders.push(Contender {
                policy_name: loaded.name().into(),
                coordinator_name: "none".into(),
                policy: policy_ref,
                coordinator: None,
            });
        }
        match &choice {
            CoordinatorChoice::None => {}
            CoordinatorChoice::Mpc => contenders.push(Contender {
                policy_name: loaded.name().into(),
                coordinator_name: "mpc".into(),
                policy: policy_ref,
                coordinator: Some(&mpc),
            }),
            CoordinatorChoice::Neural(..) => contenders.push(Contender {
                policy_name: loaded.name().into(),
                coordinator_name: "neural".into(),
                policy: policy_ref,
                coordinator: Some(&neural),
            }),
        }
        report.merge(run_backtest(&setup, &contenders)?);
    }
    write_report_csv(&report, create(&cfg.output(out)?)?)?;
    Ok(())
}

/// Re-summarizes the per-path rows of one or more reports into summary rows
/// only. A (initialization, policy, coordinator, path) row present in several
/// reports counts once.
pub fn report(inputs: &[PathBuf], out: &Path) -> CliResult {
    let cfg = RunConfig::load_or_default(None)?;
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for input in inputs {
        for row in read_report_rows(open(input)?)? {
            let key = (row.initialization.clone(), row.policy.clone(), row.coordinator.clone(), row.path_id);
            if seen.insert(key) {
                rows.push(row);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("reports hold no per-path rows".into()).into());
    }
    let table = EvalReport {
        summaries: summarize(&rows),
        rows: Vec::new(),
    };
    write_report_csv(&table, create(&cfg.output(out)?)?)?;
    Ok(())
}
