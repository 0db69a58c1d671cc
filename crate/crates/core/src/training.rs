//! Primal-dual policy training, direct-backprop coordinator training and an
//! aggregated-dataset (DAGGER-style) coordinator fit.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coordinators::{
    mpc_coordinate, BoundCoordinator, DemandForecaster, DualSearchConfig, InnerPlanner,
    NeuralCoordinator, TeacherForcing,
};
use crate::error::{ensure_finite, Error, Result};
use crate::idp::{
    initial_inventory, rollout, CapacityPath, ExoSeries, InitMode, InitialInventory, Policy,
    Resource, Rollout, RolloutOptions, Simulation,
};
use crate::optim::{clip_norm, Direction, Optimizer, OptimizerConfig};
use crate::policies::{Bound, ParametricPolicy};
use crate::seed;
use crate::tape::{ParamVector, Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Products per minibatch (`M`).
    pub batch_size: usize,
    pub lr: f64,
    pub dual_step: f64,
    /// Weight of the squared-violation term added to the policy objective.
    pub quad_penalty: f64,
    /// Violation weight `α` of the coordinator objective.
    pub violation_weight: f64,
    /// Price weight `κ` of the coordinator objective.
    pub l1_weight: f64,
    /// Number of capacity paths `|𝒢|` used by policy training.
    pub path_count: usize,
    /// Passes over the population; one pass is `⌈N/M⌉` iterations.
    pub epochs: usize,
    pub seed: u64,
    pub gamma: f64,
    pub optimizer: OptimizerConfig,
    pub grad_clip: Option<f64>,
    /// Relative change of the moving averages below which training stops.
    pub tolerance: f64,
    /// Moving-average window, in iterations.
    pub window: usize,
    pub init_mode: InitMode,
    pub forecast_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            dual_step: 0.5,
            quad_penalty: 1.0,
            violation_weight: 10.0,
            l1_weight: 0.01,
            path_count: 8,
            epochs: 20,
            seed: 0,
            gamma: 1.0,
            optimizer: OptimizerConfig::Sgd,
            grad_clip: None,
            tolerance: 1e-4,
            window: 10,
            init_mode: InitMode::Zero,
            forecast_len: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, population: usize) -> Result<()> {
        if population == 0 {
            return Err(Error::Contract("training population is empty".into()));
        }
        if self.batch_size == 0 || self.batch_size > population {
            return Err(Error::Config(format!(
                "batch size {} must lie in 1..={population}",
                self.batch_size
            )));
        }
        let positive = [self.lr, self.tolerance, self.gamma];
        let nonneg = [self.dual_step, self.quad_penalty, self.violation_weight, self.l1_weight];
        if positive.iter().any(|v| !(*v > 0.0)) || nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config("training rates and weights must be positive".into()));
        }
        if self.gamma > 1.0 || self.epochs == 0 || self.window == 0 || self.path_count == 0 {
            return Err(Error::Config(
                "discount must be at most 1 and epochs, window, path count positive".into(),
            ));
        }
        Ok(())
    }

    pub fn iterations(&self, population: usize) -> usize {
        self.epochs * population.div_ceil(self.batch_size)
    }

    fn options(&self, population: usize) -> RolloutOptions {
        RolloutOptions {
            gamma: self.gamma,
            aggregate_scale: population as f64 / self.batch_size as f64,
            weeks: None,
        }
    }
}

/// Per-path dual costs `λ^j_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub costs: Vec<Vec<[f64; 2]>>,
}

impl DualState {
    pub fn zeros(paths: usize, horizon: usize) -> Self {
        DualState {
            costs: vec![vec![[0.0; 2]; horizon]; paths],
        }
    }

    /// Projected step `λ ← (λ + step·(usage − K)/K̄)₊`; unlimited weeks stay at 0.
    pub fn update(&mut self, j: usize, path: &CapacityPath, usage: [&[f64]; 2], step: f64) {
        let scale = limit_scale(path);
        for (t, lam) in self.costs[j].iter_mut().enumerate() {
            let k = path.limit(t);
            for r in 0..2 {
                lam[r] = if k[r].is_finite() {
                    (lam[r] + step * (usage[r][t] - k[r]) / scale[r]).max(0.0)
                } else {
                    0.0
                };
            }
        }
    }
}

/// Mean finite limit per resource, or 1 when none is finite or it is 0.
pub fn limit_scale(path: &CapacityPath) -> [f64; 2] {
    [Resource::Storage, Resource::Inbound].map(|r| {
        path.mean_finite(r, 0..path.len())
            .filter(|m| *m > 0.0)
            .unwrap_or(1.0)
    })
}

/// `Σ_t ((usage_t − K_t)₊ / K̄)` per resource.
pub fn relative_violation(path: &CapacityPath, usage: [&[f64]; 2]) -> [f64; 2] {
    let scale = limit_scale(path);
    let mut out = [0.0; 2];
    for (r, o) in out.iter_mut().enumerate() {
        for (t, u) in usage[r].iter().enumerate() {
            let k = path.limit(t)[r];
            if k.is_finite() {
                *o += (u - k).max(0.0) / scale[r];
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub objective: f64,
    pub violation_storage: f64,
    pub violation_inbound: f64,
    pub forecast_loss: f64,
    pub l1_cost: f64,
}

pub fn write_metrics_csv<W: Write>(metrics: &[IterationMetrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "iteration",
        "objective",
        "violation_storage",
        "violation_inbound",
        "forecast_loss",
        "l1_cost",
    ])?;
    for m in metrics {
        w.write_record(&[
            m.iteration.to_string(),
            m.objective.to_string(),
            m.violation_storage.to_string(),
            m.violation_inbound.to_string(),
            m.forecast_loss.to_string(),
            m.l1_cost.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Moving-average stopping rule on objective and total violation.
fn plateaued(metrics: &[IterationMetrics], window: usize, tol: f64) -> bool {
    if metrics.len() < 2 * window {
        return false;
    }
    let n = metrics.len();
    let avg = |range: std::ops::Range<usize>, f: &dyn Fn(&IterationMetrics) -> f64| {
        metrics[range].iter().map(f).sum::<f64>() / window as f64
    };
    let series: [&dyn Fn(&IterationMetrics) -> f64; 2] = [
        &|m| m.objective,
        &|m| m.violation_storage + m.violation_inbound,
    ];
    series.iter().all(|f| {
        let recent = avg(n - window..n, f);
        let prev = avg(n - 2 * window..n - window, f);
        (recent - prev).abs() <= tol * (1.0 + prev.abs())
    })
}

fn minibatch(population: &[ExoSeries], m: usize, rng: &mut impl Rng) -> Vec<ExoSeries> {
    if m == population.len() {
        return population.to_vec();
    }
    let mut idx = index::sample(rng, population.len(), m).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| population[i].clone()).collect()
}

fn apply_gradient(
    params: &mut ParamVector,
    leaves: &[Var],
    tape: &Tape,
    output: Var,
    opt: &mut Optimizer,
    clip: Option<f64>,
    dir: Direction,
    iteration: usize,
) -> Result<()> {
    let grads = tape.backward(output).map_err(|e| {
        Error::Numeric(format!("iteration {iteration}: {e}"))
    })?;
    params.zero_grad();
    params.accumulate(leaves, &grads);
    let mut g = params.grads().to_vec();
    if let Some(c) = clip {
        clip_norm(&mut g, c);
    }
    opt.step(params.values_mut(), &g, dir);
    if params.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("iteration {iteration}: parameters diverged")));
    }
    Ok(())
}

/// `F = (1/M)·Σ_i Σ_t γ^t R^λ − α·Σ_t γ^t W_t`, where `W_t` sums the squared
/// relative violations of each limited resource.
pub fn policy_objective(
    roll: &Rollout,
    path: &CapacityPath,
    batch: usize,
    quad_penalty: f64,
    gamma: f64,
) -> Var {
    let scale = limit_scale(path);
    let mut penalty = Vec::with_capacity(2 * roll.storage.len());
    let mut disc = 1.0;
    for t in 0..roll.storage.len() {
        let k = path.limit(t);
        for (r, agg) in [roll.storage[t], roll.inbound[t]].into_iter().enumerate() {
            if k[r].is_finite() {
                penalty.push(((agg - k[r]) / scale[r]).max0().square() * disc);
            }
        }
        disc *= gamma;
    }
    roll.objective * (1.0 / batch as f64) - Var::sum_slice(&penalty) * quad_penalty
}

#[derive(Clone, Debug)]
pub struct PolicyTrainResult {
    pub params: ParamVector,
    pub duals: DualState,
    pub metrics: Vec<IterationMetrics>,
    pub converged: bool,
}

/// Primal-dual training of a parametric buying policy against teacher-forced
/// dual costs, one cost sequence per capacity path.
pub fn train_policy<P: ParametricPolicy + ?Sized>(
    population: &[ExoSeries],
    paths: &[CapacityPath],
    policy: &P,
    init: ParamVector,
    cfg: &TrainConfig,
) -> Result<PolicyTrainResult> {
    cfg.validate(population.len())?;
    if paths.is_empty() {
        return Err(Error::Contract("policy training needs at least one path".into()));
    }
    let horizon = population[0].horizon();
    let mut rng = seed::rng(seed::derive(cfg.seed, "train-policy"));
    let mut params = init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.len());
    let mut duals = DualState::zeros(paths.len(), horizon);
    let mut metrics = Vec::new();
    let mut converged = false;
    let opts = cfg.options(population.len());
    for it in 0..cfg.iterations(population.len()) {
        let batch = minibatch(population, cfg.batch_size, &mut rng);
        let j = rng.gen_range(0..paths.len());
        let path = &paths[j];
        let init_inv: Vec<InitialInventory> =
            batch.iter().map(|p| initial_inventory(p, cfg.init_mode)).collect();
        let mut tf = TeacherForcing::new(duals.costs[j].clone(), horizon, cfg.forecast_len)?;
        let (objective, ledger) = {
            let tape = Tape::start();
            let leaves = params.taped(&tape);
            let bound = Bound {
                policy,
                params: &leaves,
            };
            let roll = rollout(&batch, &init_inv, &bound, &mut tf, path, opts)
                .map_err(|e| provenance(e, it))?;
            let f = policy_objective(&roll, path, batch.len(), cfg.quad_penalty, cfg.gamma);
            ensure_finite(f.value(), || format!("iteration {it}: objective"))?;
            apply_gradient(&mut params, &leaves, &tape, f, &mut opt, cfg.grad_clip, Direction::Ascend, it)?;
            (f.value(), roll.ledger)
        };
        let usage = [ledger.usage(Resource::Storage), ledger.usage(Resource::Inbound)];
        let viol = relative_violation(path, [&usage[0], &usage[1]]);
        duals.update(j, path, [&usage[0], &usage[1]], cfg.dual_step);
        metrics.push(IterationMetrics {
            iteration: it,
            objective,
            violation_storage: viol[0],
            violation_inbound: viol[1],
            forecast_loss: 0.0,
            l1_cost: 0.0,
        });
        if plateaued(&metrics, cfg.window, cfg.tolerance) {
            converged = true;
            break;
        }
    }
    Ok(PolicyTrainResult {
        params,
        duals,
        metrics,
        converged,
    })
}

fn provenance(e: Error, it: usize) -> Error {
    if e.is_numeric() {
        Error::Numeric(format!("iteration {it}: {e}"))
    } else {
        e
    }
}

/// Separately taped terms of the coordinator objective.
#[derive(Clone, Copy, Debug)]
pub struct CoordinatorTerms {
    pub storage: Var,
    pub inbound: Var,
    pub l1: Var,
    pub forecast: Var,
    pub total: Var,
}

/// `Σ_t [α((Ĩ_t−K¹_t)₊/K̄¹)² + α((J̃_t−K²_t)₊/K̄²)² + κ‖λ_t‖₁/s + Σ_l ‖λ_t − λ̂_{t−l,l}‖²/s²]`
/// with `s` the coordinator output scale.
pub fn coordinator_objective(
    roll: &Rollout,
    path: &CapacityPath,
    alpha: f64,
    kappa: f64,
    price_scale: f64,
) -> CoordinatorTerms {
    let scale = limit_scale(path);
    let weeks = roll.storage.len();
    let mut storage = Vec::with_capacity(weeks);
    let mut inbound = Vec::with_capacity(weeks);
    let mut l1 = Vec::with_capacity(2 * weeks);
    let mut forecast = Vec::new();
    for t in 0..weeks {
        let k = path.limit(t);
        if k[0].is_finite() {
            storage.push(((roll.storage[t] - k[0]) / scale[0]).max0().square());
        }
        if k[1].is_finite() {
            inbound.push(((roll.inbound[t] - k[1]) / scale[1]).max0().square());
        }
        let now = roll.announcements[t].current;
        l1.extend(now);
        let horizon = roll.announcements[t].forecast_len();
        for l in 1..=horizon.min(t) {
            let past = roll.announcements[t - l].at(l);
            for r in 0..2 {
                forecast.push((now[r] - past[r]).square());
            }
        }
    }
    let storage = Var::sum_slice(&storage) * alpha;
    let inbound = Var::sum_slice(&inbound) * alpha;
    let l1 = Var::sum_slice(&l1) * (kappa / price_scale);
    let forecast = Var::sum_slice(&forecast) * (1.0 / (price_scale * price_scale));
    CoordinatorTerms {
        storage,
        inbound,
        l1,
        forecast,
        total: storage + inbound + l1 + forecast,
    }
}

/// Draws a fresh capacity path each pass.
pub type PathSampler<'a> = dyn FnMut(&mut seed::Rng) -> Result<CapacityPath> + 'a;

#[derive(Clone, Debug)]
pub struct CoordinatorTrainResult {
    pub params: ParamVector,
    pub metrics: Vec<IterationMetrics>,
    pub converged: bool,
}

/// Direct-backprop training of the neural coordinator against a fixed policy.
pub fn train_coordinator<P: ParametricPolicy + ?Sized>(
    population: &[ExoSeries],
    sample_path: &mut PathSampler<'_>,
    policy: &P,
    policy_params: &[f64],
    coordinator: &NeuralCoordinator,
    init: ParamVector,
    cfg: &TrainConfig,
) -> Result<CoordinatorTrainResult> {
    cfg.validate(population.len())?;
    if coordinator.cfg.forecast_len != cfg.forecast_len {
        return Err(Error::Config(format!(
            "coordinator forecasts {} weeks but training uses {}",
            coordinator.cfg.forecast_len, cfg.forecast_len
        )));
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "train-coordinator"));
    let mut params = init;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, params.len());
    let theta: Vec<Var> = policy_params.iter().map(|&v| Var::constant(v)).collect();
    let bound_policy = Bound {
        policy,
        params: &theta,
    };
    let opts = cfg.options(population.len());
    let mut metrics = Vec::new();
    let mut converged = false;
    for it in 0..cfg.iterations(population.len()) {
        let path = sample_path(&mut rng)?;
        let batch = minibatch(population, cfg.batch_size, &mut rng);
        let init_inv: Vec<InitialInventory> =
            batch.iter().map(|p| initial_inventory(p, cfg.init_mode)).collect();
        let tape = Tape::start();
        let leaves = params.taped(&tape);
        let mut coord = BoundCoordinator {
            coordinator,
            params: &leaves,
        };
        let roll = rollout(&batch, &init_inv, &bound_policy, &mut coord, &path, opts)
            .map_err(|e| provenance(e, it))?;
        let terms = coordinator_objective(
            &roll,
            &path,
            cfg.violation_weight,
            cfg.l1_weight,
            coordinator.cfg.output_scale,
        );
        ensure_finite(terms.total.value(), || format!("iteration {it}: objective"))?;
        apply_gradient(&mut params, &leaves, &tape, terms.total, &mut opt, cfg.grad_clip, Direction::Descend, it)?;
        drop(tape);
        metrics.push(IterationMetrics {
            iteration: it,
            objective: terms.total.value(),
            violation_storage: terms.storage.value(),
            violation_inbound: terms.inbound.value(),
            forecast_loss: terms.forecast.value(),
            l1_cost: terms.l1.value(),
        });
        if plateaued(&metrics, cfg.window, cfg.tolerance) {
            converged = true;
            break;
        }
    }
    Ok(CoordinatorTrainResult {
        params,
        metrics,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DaggerConfig {
    pub rounds: usize,
    /// Weeks per rollout; the series must extend `H` weeks beyond this.
    pub rollout_weeks: usize,
    pub fit_steps: usize,
    pub fit_lr: f64,
    pub seed: u64,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        DaggerConfig {
            rounds: 5,
            rollout_weeks: 4,
            fit_steps: 500,
            fit_lr: 0.01,
            seed: 0,
        }
    }
}

/// One labelled state.
#[derive(Clone, Debug, PartialEq)]
pub struct DaggerSample {
    pub round: usize,
    pub week: usize,
    pub features: Vec<f64>,
    /// `[l][resource]` is true when that limit is finite.
    pub mask: Vec<[bool; 2]>,
    pub target: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct DaggerResult {
    pub params: ParamVector,
    pub dataset: Vec<DaggerSample>,
    /// Dataset size after each round.
    pub sizes: Vec<usize>,
    /// Final fit loss after each round.
    pub fit_loss: Vec<f64>,
}

/// Everything the dual-search oracle needs to label states.
pub struct DaggerOracle<'a> {
    pub planner: &'a dyn InnerPlanner,
    pub search: &'a DualSearchConfig,
    pub forecaster: DemandForecaster,
}

/// Rolls out under the current coordinator, labels every visited state with
/// the oracle's dual prices, aggregates the data and refits by least squares.
#[allow(clippy::too_many_arguments)]
pub fn dagger_coordinator(
    products: &[ExoSeries],
    initial: &[InitialInventory],
    sample_path: &mut PathSampler<'_>,
    policy: &dyn Policy,
    oracle: &DaggerOracle<'_>,
    coordinator: &NeuralCoordinator,
    init: ParamVector,
    cfg: &DaggerConfig,
) -> Result<DaggerResult> {
    if oracle.search.horizon != coordinator.cfg.forecast_len + 1 {
        return Err(Error::Config(format!(
            "oracle horizon {} must equal the coordinator's forecast length plus one",
            oracle.search.horizon
        )));
    }
    let mut rng = seed::rng(seed::derive(cfg.seed, "dagger"));
    let mut params = init;
    let mut dataset: Vec<DaggerSample> = Vec::new();
    let mut sizes = Vec::with_capacity(cfg.rounds);
    let mut fit_loss = Vec::with_capacity(cfg.rounds);
    let h = oracle.search.horizon;
    for round in 0..cfg.rounds {
        let path = sample_path(&mut rng)?;
        let omega = params.constants();
        let opts = RolloutOptions {
            weeks: Some(cfg.rollout_weeks),
            ..RolloutOptions::default()
        };
        let mut sim = Simulation::new(products, initial, &path, opts)?;
        for t in 0..=cfg.rollout_weeks {
            let view = sim.view();
            let features: Vec<f64> = coordinator.features(&view)?.iter().map(|v| v.value()).collect();
            let mask: Vec<[bool; 2]> = (0..h)
                .map(|l| view.path.limit(t + l).map(f64::is_finite))
                .collect();
            let label = mpc_coordinate(&view, &oracle.forecaster, oracle.planner, oracle.search, None, &mut rng)
                .map_err(|e| Error::Contract(format!("oracle failed at round {round}, week {t}: {e}")))?;
            dataset.push(DaggerSample {
                round,
                week: t,
                features,
                mask,
                target: label.prices,
            });
            if t < cfg.rollout_weeks {
                let prices = coordinator.announce_with(&omega, &view)?;
                sim.step_week(policy, prices)?;
            }
        }
        sizes.push(dataset.len());
        let mut opt = Optimizer::new(OptimizerConfig::adam(), cfg.fit_lr, params.len());
        let mut last = f64::NAN;
        for step in 0..cfg.fit_steps {
            let tape = Tape::start();
            let leaves = params.taped(&tape);
            let mut terms = Vec::with_capacity(dataset.len() * 2 * h);
            for s in &dataset {
                let x: Vec<Var> = s.features.iter().map(|&v| Var::constant(v)).collect();
                let out = coordinator.outputs_from_features(&leaves, &x, &s.mask);
                for (o, y) in out.iter().zip(&s.target) {
                    for r in 0..2 {
                        terms.push((o[r] - y[r]).square());
                    }
                }
            }
            let loss = Var::sum_slice(&terms) * (1.0 / dataset.len() as f64);
            last = loss.value();
            apply_gradient(&mut params, &leaves, &tape, loss, &mut opt, None, Direction::Descend, step)?;
        }
        fit_loss.push(last);
    }
    Ok(DaggerResult {
        params,
        dataset,
        sizes,
        fit_loss,
    })
}

/// Zero-inventory or stocked starting states for a population.
pub fn initial_states(products: &[ExoSeries], mode: InitMode) -> Vec<InitialInventory> {
    products.iter().map(|p| initial_inventory(p, mode)).collect()
}
