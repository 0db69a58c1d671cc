//! Backtest harness: violation metrics, reward normalization, path-ensemble
//! evaluation and the finite-sample generalization bound.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coordinators::ZeroPrice;
use crate::error::{Error, Result};
use crate::idp::{
    initial_inventory, rollout, CapacityPath, Coordinator, ExoSeries, InitMode,
    InitialInventory, Policy, Resource, RolloutLedger, RolloutOptions,
};
use crate::seed;

/// Relative violation above which a week counts toward M3/M4.
pub const SEVERE_VIOLATION: f64 = 0.10;
/// Share of the limit a reference run must reach for a week to count toward M2/M4.
pub const NEAR_BINDING: f64 = 0.9;

pub const FORMULA_HEADER: &str = "# m1 = 100 * mean_t (usage_t - K_t)+ / K_t; \
m2 = m1 over weeks where an unconstrained reference has usage_t >= 0.9 K_t; \
m3 = 100 * share of weeks with (usage_t - K_t)+ / K_t > 0.10; m4 = m3 over the m2 weeks; \
weeks with K_t = 0 or K_t = inf are excluded; \
rescaled_reward = 100 * sum_t gamma^t R_t / same for unconstrained base stock; \
summary rows average per-path rows with equal weight";

/// M1 to M4 of one run on one resource, as percentages.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationMetrics {
    pub m1: f64,
    /// `None` when no week met the near-binding trigger.
    pub m2: Option<f64>,
    pub m3: f64,
    pub m4: Option<f64>,
    /// Weeks with a finite positive limit.
    pub evaluated_weeks: usize,
    /// Weeks excluded because the limit was 0.
    pub zero_limit_weeks: usize,
    pub triggered_weeks: usize,
}

/// Metrics from per-week usage, limits and reference usages.
pub fn violation_metrics(usage: &[f64], limits: &[f64], references: &[&[f64]]) -> Result<ViolationMetrics> {
    for (what, len) in std::iter::once(("limits", limits.len()))
        .chain(references.iter().map(|r| ("reference usage", r.len())))
    {
        if len != usage.len() {
            return Err(Error::LengthMismatch {
                what,
                expected: usage.len(),
                found: len,
            });
        }
    }
    let mut out = ViolationMetrics::default();
    let (mut sum, mut severe) = (0.0, 0usize);
    let (mut trig_sum, mut trig_severe) = (0.0, 0usize);
    for (t, (&u, &k)) in usage.iter().zip(limits).enumerate() {
        if !k.is_finite() {
            continue;
        }
        if k == 0.0 {
            out.zero_limit_weeks += 1;
            continue;
        }
        out.evaluated_weeks += 1;
        let rel = (u - k).max(0.0) / k;
        let is_severe = rel > SEVERE_VIOLATION;
        sum += rel;
        severe += is_severe as usize;
        if references.iter().any(|r| r[t] >= NEAR_BINDING * k) {
            out.triggered_weeks += 1;
            trig_sum += rel;
            trig_severe += is_severe as usize;
        }
    }
    if out.evaluated_weeks > 0 {
        let n = out.evaluated_weeks as f64;
        out.m1 = 100.0 * sum / n;
        out.m3 = 100.0 * severe as f64 / n;
    }
    if out.triggered_weeks > 0 {
        let n = out.triggered_weeks as f64;
        out.m2 = Some(100.0 * trig_sum / n);
        out.m4 = Some(100.0 * trig_severe as f64 / n);
    }
    Ok(out)
}

/// Metrics of `ledger` on `path` for one resource, with both unconstrained
/// reference ledgers defining the near-binding weeks.
pub fn metrics(
    ledger: &RolloutLedger,
    path: &CapacityPath,
    references: &[&RolloutLedger],
    resource: Resource,
) -> Result<ViolationMetrics> {
    if ledger.weeks() != path.len() {
        return Err(Error::HorizonMismatch {
            expected: path.len(),
            found: ledger.weeks(),
        });
    }
    let usage = ledger.usage(resource);
    let refs: Vec<Vec<f64>> = references.iter().map(|r| r.usage(resource)).collect();
    let refs: Vec<&[f64]> = refs.iter().map(Vec::as_slice).collect();
    violation_metrics(&usage, path.series(resource), &refs)
}

/// `100 · reward / reference`, or `None` unless the reference is positive.
pub fn rescaled_reward(reward: f64, reference: f64) -> Option<f64> {
    (reference > 0.0).then(|| 100.0 * reward / reference)
}

/// Week-to-week revisions of announced prices for a fixed target week.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastRevisions {
    pub mean: f64,
    pub mean_abs: f64,
    pub count: usize,
}

/// Collects `λ̂_{t+1, τ−t−1} − λ̂_{t, τ−t}` for every week `t` and target
/// `τ = t + l` covered by both announcements. Offset 0 is the current price.
/// A martingale forecaster has mean revision near 0.
pub fn forecast_revisions(prices: &[Vec<[f64; 2]>], resource: Resource) -> ForecastRevisions {
    let r = resource.index();
    let (mut sum, mut abs, mut count) = (0.0, 0.0, 0usize);
    for pair in prices.windows(2) {
        for l in 1..pair[0].len() {
            if let Some(next) = pair[1].get(l - 1) {
                let d = next[r] - pair[0][l][r];
                sum += d;
                abs += d.abs();
                count += 1;
            }
        }
    }
    if count == 0 {
        return ForecastRevisions::default();
    }
    ForecastRevisions {
        mean: sum / count as f64,
        mean_abs: abs / count as f64,
        count,
    }
}

/// `Ĉ_T = Σ_t (usage_t − K_t)₊` for storage and inbound; unlimited weeks add 0.
pub fn violation_functionals(ledger: &RolloutLedger, path: &CapacityPath) -> [f64; 2] {
    [Resource::Storage, Resource::Inbound].map(|r| {
        ledger
            .usage(r)
            .iter()
            .zip(path.series(r))
            .filter(|(_, k)| k.is_finite())
            .map(|(u, k)| (u - k).max(0.0))
            .sum()
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub c_a: f64,
    pub p_max: f64,
    pub c_max: f64,
    pub w_max: f64,
    pub u_max: f64,
    pub horizon: usize,
    pub products: usize,
    pub policies: usize,
    pub coordinators: usize,
    pub paths: usize,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremBound {
    pub reward: f64,
    pub storage: f64,
    pub inbound: f64,
}

pub fn theorem_bound(b: &BoundInputs) -> Result<TheoremBound> {
    if !(b.delta > 0.0 && b.delta < 1.0) {
        return Err(Error::Domain(format!("delta {} must lie in (0, 1)", b.delta)));
    }
    let weights = [b.c_a, b.p_max, b.c_max, b.w_max, b.u_max];
    if weights.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("bound constants must be nonnegative".into()));
    }
    if [b.horizon, b.products, b.policies, b.coordinators, b.paths].contains(&0) {
        return Err(Error::Domain("bound counts must be at least 1".into()));
    }
    let classes = b.policies as f64 * b.coordinators as f64 * b.paths as f64;
    let log_term = (2.0 * classes / b.delta).ln();
    let t2 = (b.horizon * b.horizon) as f64;
    let n = b.products as f64;
    let aggregate = t2 * (n * log_term / 2.0).sqrt();
    Ok(TheoremBound {
        reward: b.c_a * (b.p_max + b.c_max) * t2 * (log_term / (2.0 * n)).sqrt(),
        storage: b.c_a * b.w_max * aggregate,
        inbound: b.c_a * b.u_max * aggregate,
    })
}

/// Builds a fresh coordinator for the path with the given index.
pub type CoordinatorFactory<'a> = dyn Fn(usize) -> Result<Box<dyn Coordinator + 'a>> + Sync + 'a;

/// A (policy, coordinator) pair to evaluate; `coordinator: None` runs with zero prices.
pub struct Contender<'a> {
    pub policy_name: String,
    pub coordinator_name: String,
    pub policy: &'a (dyn Policy + Sync),
    pub coordinator: Option<&'a CoordinatorFactory<'a>>,
}

pub struct BacktestSetup<'a> {
    pub products: &'a [ExoSeries],
    pub init_mode: InitMode,
    pub paths: &'a [CapacityPath],
    pub gamma: f64,
    pub resource: Resource,
    /// Forecast entries in the zero-price announcements of unpriced runs.
    pub forecast_len: usize,
    /// Unconstrained base stock; normalizes rewards and defines near-binding weeks.
    pub base_stock: &'a (dyn Policy + Sync),
    /// Unconstrained learned policy, the second near-binding reference.
    pub unconstrained_rl: Option<&'a (dyn Policy + Sync)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub initialization: String,
    pub policy: String,
    pub coordinator: String,
    pub path_id: usize,
    pub m1: f64,
    pub m2: Option<f64>,
    pub m3: f64,
    pub m4: Option<f64>,
    pub reward: f64,
    pub rescaled_reward: Option<f64>,
    pub zero_limit_weeks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub initialization: String,
    pub policy: String,
    pub coordinator: String,
    pub paths: usize,
    pub m1: f64,
    pub m1_std: f64,
    pub m2: Option<f64>,
    pub m3: f64,
    pub m4: Option<f64>,
    pub reward: f64,
    pub rescaled_reward: Option<f64>,
    pub rescaled_std: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<EvalSummary>,
}

impl EvalReport {
    pub fn summary(&self, policy: &str, coordinator: &str, initialization: &str) -> Option<&EvalSummary> {
        self.summaries.iter().find(|s| {
            s.policy == policy && s.coordinator == coordinator && s.initialization == initialization
        })
    }

    pub fn rows_for<'s>(&'s self, policy: &'s str, coordinator: &'s str) -> impl Iterator<Item = &'s EvalRow> + 's {
        self.rows
            .iter()
            .filter(move |r| r.policy == policy && r.coordinator == coordinator)
    }

    pub fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.summaries.extend(other.summaries);
    }
}

pub fn init_label(mode: InitMode) -> &'static str {
    match mode {
        InitMode::Zero => "zero",
        InitMode::OnhandWithInflight => "onhand_with_inflight",
    }
}

fn run(
    products: &[ExoSeries],
    initial: &[InitialInventory],
    policy: &dyn Policy,
    coordinator: &mut dyn Coordinator,
    path: &CapacityPath,
    gamma: f64,
) -> Result<RolloutLedger> {
    let opts = RolloutOptions {
        gamma,
        ..RolloutOptions::default()
    };
    Ok(rollout(products, initial, policy, coordinator, path, opts)?.ledger)
}

fn zero_price_run(setup: &BacktestSetup<'_>, initial: &[InitialInventory], policy: &dyn Policy) -> Result<RolloutLedger> {
    let horizon = setup.paths[0].len();
    run(
        setup.products,
        initial,
        policy,
        &mut ZeroPrice {
            forecast_len: setup.forecast_len,
        },
        &CapacityPath::unconstrained(horizon),
        setup.gamma,
    )
}

/// Evaluates every contender on every path.
pub fn backtest(setup: &BacktestSetup<'_>, contenders: &[Contender<'_>]) -> Result<EvalReport> {
    if setup.paths.is_empty() {
        return Err(Error::Contract("backtest needs at least one path".into()));
    }
    let initial: Vec<InitialInventory> = setup
        .products
        .iter()
        .map(|p| initial_inventory(p, setup.init_mode))
        .collect();
    let bs_ref = zero_price_run(setup, &initial, setup.base_stock)?;
    let rl_ref = setup
        .unconstrained_rl
        .map(|p| zero_price_run(setup, &initial, p))
        .transpose()?;
    let mut references = vec![&bs_ref];
    references.extend(rl_ref.as_ref());
    let reference_reward = bs_ref.discounted_reward();
    let label = init_label(setup.init_mode);

    let mut report = EvalReport::default();
    for c in contenders {
        let unpriced = match c.coordinator {
            None => Some(zero_price_run(setup, &initial, c.policy)?),
            Some(_) => None,
        };
        let rows: Result<Vec<EvalRow>> = (0..setup.paths.len())
            .into_par_iter()
            .map(|j| {
                let path = &setup.paths[j];
                let owned;
                let ledger = match (&unpriced, c.coordinator) {
                    (Some(l), _) => l,
                    (None, Some(factory)) => {
                        let mut coord = factory(j)?;
                        owned = run(setup.products, &initial, c.policy, coord.as_mut(), path, setup.gamma)?;
                        &owned
                    }
                    (None, None) => unreachable!(),
                };
                let m = metrics(ledger, path, &references, setup.resource)?;
                let reward = ledger.discounted_reward();
                Ok(EvalRow {
                    initialization: label.to_string(),
                    policy: c.policy_name.clone(),
                    coordinator: c.coordinator_name.clone(),
                    path_id: j,
                    m1: m.m1,
                    m2: m.m2,
                    m3: m.m3,
                    m4: m.m4,
                    reward,
                    rescaled_reward: rescaled_reward(reward, reference_reward),
                    zero_limit_weeks: m.zero_limit_weeks,
                })
            })
            .collect();
        report.rows.extend(rows?);
    }
    report.summaries = summarize(&report.rows);
    Ok(report)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Ensemble means per (initialization, policy, coordinator), in first-seen order.
pub fn summarize(rows: &[EvalRow]) -> Vec<EvalSummary> {
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let k = (r.initialization.as_str(), r.policy.as_str(), r.coordinator.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(init, pol, coord)| {
            let group: Vec<&EvalRow> = rows
                .iter()
                .filter(|r| r.initialization == init && r.policy == pol && r.coordinator == coord)
                .collect();
            let col = |f: &dyn Fn(&EvalRow) -> Option<f64>| -> Vec<f64> { group.iter().filter_map(|r| f(r)).collect() };
            let (m1, m1_std) = mean_std(&col(&|r| Some(r.m1)));
            let m2 = col(&|r| r.m2);
            let m4 = col(&|r| r.m4);
            let rescaled = col(&|r| r.rescaled_reward);
            let (rs_mean, rs_std) = mean_std(&rescaled);
            EvalSummary {
                initialization: init.to_string(),
                policy: pol.to_string(),
                coordinator: coord.to_string(),
                paths: group.len(),
                m1,
                m1_std,
                m2: (!m2.is_empty()).then(|| mean_std(&m2).0),
                m3: mean_std(&col(&|r| Some(r.m3))).0,
                m4: (!m4.is_empty()).then(|| mean_std(&m4).0),
                reward: mean_std(&col(&|r| Some(r.reward))).0,
                rescaled_reward: (!rescaled.is_empty()).then_some(rs_mean),
                rescaled_std: (!rescaled.is_empty()).then_some(rs_std),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

const REPORT_COLUMNS: [&str; 14] = [
    "scope",
    "initialization",
    "policy",
    "coordinator",
    "path_id",
    "paths",
    "m1",
    "m1_std",
    "m2",
    "m3",
    "m4",
    "reward",
    "rescaled_reward",
    "rescaled_std",
];

/// Summary rows followed by per-path rows, after a `#` line stating the formulas.
pub fn write_report_csv<W: Write>(report: &EvalReport, mut out: W) -> Result<()> {
    writeln!(out, "{FORMULA_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for s in &report.summaries {
        w.write_record(&[
            "summary".to_string(),
            s.initialization.clone(),
            s.policy.clone(),
            s.coordinator.clone(),
            String::new(),
            s.paths.to_string(),
            s.m1.to_string(),
            s.m1_std.to_string(),
            opt(s.m2),
            s.m3.to_string(),
            opt(s.m4),
            s.reward.to_string(),
            opt(s.rescaled_reward),
            opt(s.rescaled_std),
        ])?;
    }
    for r in &report.rows {
        w.write_record(&[
            "path".to_string(),
            r.initialization.clone(),
            r.policy.clone(),
            r.coordinator.clone(),
            r.path_id.to_string(),
            "1".to_string(),
            r.m1.to_string(),
            String::new(),
            opt(r.m2),
            r.m3.to_string(),
            opt(r.m4),
            r.reward.to_string(),
            opt(r.rescaled_reward),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the per-path rows of a report; summary rows are recomputed by [`summarize`].
pub fn read_report_rows<R: Read>(input: R) -> Result<Vec<EvalRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(Error::Data(format!("unexpected report columns: {:?}", headers)));
    }
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Data(format!("bad {what} value {s:?}")))
    };
    let parse_opt = |s: &str, what: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            parse(s, what).map(Some)
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if &rec[0] != "path" {
            continue;
        }
        rows.push(EvalRow {
            initialization: rec[1].to_string(),
            policy: rec[2].to_string(),
            coordinator: rec[3].to_string(),
            path_id: rec[4]
                .parse()
                .map_err(|_| Error::Data(format!("bad path_id {:?}", &rec[4])))?,
            m1: parse(&rec[6], "m1")?,
            m2: parse_opt(&rec[8], "m2")?,
            m3: parse(&rec[9], "m3")?,
            m4: parse_opt(&rec[10], "m4")?,
            reward: parse(&rec[11], "reward")?,
            rescaled_reward: parse_opt(&rec[12], "rescaled_reward")?,
            zero_limit_weeks: 0,
        });
    }
    Ok(rows)
}

/// Largest total action change `max_t Σ_i |a_t^i − ā_t^i|` when one product of
/// a population is replaced by another draw from `pool`.
pub fn estimate_action_robustness(
    pool: &[ExoSeries],
    population: usize,
    swaps: usize,
    policy: &dyn Policy,
    coordinator: &dyn Fn() -> Result<Box<dyn Coordinator>>,
    path: &CapacityPath,
    init_mode: InitMode,
    rng: &mut impl Rng,
) -> Result<f64> {
    if pool.len() < 2 || population == 0 {
        return Err(Error::Contract("robustness estimate needs a pool of at least two products".into()));
    }
    let mut worst = 0.0f64;
    for _ in 0..swaps {
        let mut products: Vec<ExoSeries> = (0..population)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect();
        let base = actions(&products, policy, coordinator, path, init_mode)?;
        let j = rng.gen_range(0..population);
        products[j] = pool[rng.gen_range(0..pool.len())].clone();
        let swapped = actions(&products, policy, coordinator, path, init_mode)?;
        for t in 0..path.len() {
            let change: f64 = base.iter().zip(&swapped).map(|(a, b)| (a[t] - b[t]).abs()).sum();
            worst = worst.max(change);
        }
    }
    Ok(worst)
}

fn actions(
    products: &[ExoSeries],
    policy: &dyn Policy,
    coordinator: &dyn Fn() -> Result<Box<dyn Coordinator>>,
    path: &CapacityPath,
    init_mode: InitMode,
) -> Result<Vec<Vec<f64>>> {
    let initial: Vec<_> = products.iter().map(|p| initial_inventory(p, init_mode)).collect();
    let mut coord = coordinator()?;
    let ledger = run(products, &initial, policy, coord.as_mut(), path, 1.0)?;
    Ok(ledger
        .rows
        .iter()
        .map(|r| r.iter().map(|x| x.action).collect())
        .collect())
}

/// Inputs to the Monte-Carlo companion of [`theorem_bound`]. Path limits are
/// per product and are multiplied by the sample size.
pub struct GeneralizationSetup<'a> {
    pub pool: &'a [ExoSeries],
    pub policies: &'a [&'a (dyn Policy + Sync)],
    pub coordinators: &'a [&'a (dyn Fn() -> Result<Box<dyn Coordinator>> + Sync)],
    pub paths: &'a [CapacityPath],
    pub gamma: f64,
    pub init_mode: InitMode,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneralizationConfig {
    /// `|𝒜|`, products drawn with replacement per sample.
    pub sample_size: usize,
    pub trials: usize,
    /// Samples averaged to estimate the population values.
    pub reference_samples: usize,
    pub delta: f64,
    pub seed: u64,
    /// Population size and number of swaps for the `c_a` estimate.
    pub robustness_population: usize,
    pub robustness_swaps: usize,
}

impl Default for GeneralizationConfig {
    fn default() -> Self {
        GeneralizationConfig {
            sample_size: 100,
            trials: 200,
            reference_samples: 400,
            delta: 0.1,
            seed: 0,
            robustness_population: 20,
            robustness_swaps: 20,
        }
    }
}

/// Sampled `(V̂_T, Ĉ¹_T, Ĉ²_T)` with `V̂_T` averaged over products.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SampleValues {
    pub reward: f64,
    pub storage: f64,
    pub inbound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationReport {
    pub c_a: f64,
    pub bound: TheoremBound,
    /// Estimated population values per (policy, coordinator, path), in that nesting order.
    pub reference: Vec<SampleValues>,
    /// Per trial, the max over classes of `|sample − reference|`.
    pub gaps: Vec<SampleValues>,
}

impl GeneralizationReport {
    /// Share of trials whose gaps are all within the bound.
    pub fn within_bound(&self) -> f64 {
        let ok = self
            .gaps
            .iter()
            .filter(|g| {
                g.reward <= self.bound.reward
                    && g.storage <= self.bound.storage
                    && g.inbound <= self.bound.inbound
            })
            .count();
        ok as f64 / self.gaps.len().max(1) as f64
    }

    pub fn mean_gap(&self) -> SampleValues {
        let n = self.gaps.len().max(1) as f64;
        let mut m = SampleValues::default();
        for g in &self.gaps {
            m.reward += g.reward / n;
            m.storage += g.storage / n;
            m.inbound += g.inbound / n;
        }
        m
    }
}

fn scaled_path(path: &CapacityPath, n: usize) -> CapacityPath {
    let s = |v: &[f64]| v.iter().map(|k| k * n as f64).collect::<Vec<_>>();
    CapacityPath::new(s(&path.storage), s(&path.inbound)).expect("scaling keeps limits valid")
}

fn sample_values(setup: &GeneralizationSetup<'_>, n: usize, sample_seed: u64) -> Result<Vec<SampleValues>> {
    let mut rng = seed::rng(sample_seed);
    let products: Vec<ExoSeries> = (0..n)
        .map(|_| setup.pool[rng.gen_range(0..setup.pool.len())].clone())
        .collect();
    let initial: Vec<_> = products.iter().map(|p| initial_inventory(p, setup.init_mode)).collect();
    let mut out = Vec::new();
    for policy in setup.policies {
        for make in setup.coordinators {
            for path in setup.paths {
                let path = scaled_path(path, n);
                let mut coord = make()?;
                let ledger = run(&products, &initial, *policy, coord.as_mut(), &path, setup.gamma)?;
                let c = violation_functionals(&ledger, &path);
                out.push(SampleValues {
                    reward: ledger.discounted_reward() / n as f64,
                    storage: c[0],
                    inbound: c[1],
                });
            }
        }
    }
    Ok(out)
}

/// Draws `trials` bootstrap populations of `sample_size` products, measures
/// the worst deviation from the estimated population values and compares it
/// with [`theorem_bound`] at an empirically estimated `c_a`.
pub fn generalization_check(setup: &GeneralizationSetup<'_>, cfg: &GeneralizationConfig) -> Result<GeneralizationReport> {
    if setup.pool.is_empty() || setup.policies.is_empty() || setup.coordinators.is_empty() || setup.paths.is_empty() {
        return Err(Error::Contract("generalization check needs products, policies, coordinators and paths".into()));
    }
    let horizon = setup.pool[0].horizon();
    let mut rng = seed::rng(seed::derive(cfg.seed, "robustness"));
    let mut c_a = 0.0f64;
    for policy in setup.policies {
        for make in setup.coordinators {
            for path in setup.paths {
                let path = scaled_path(path, cfg.robustness_population);
                c_a = c_a.max(estimate_action_robustness(
                    setup.pool,
                    cfg.robustness_population,
                    cfg.robustness_swaps,
                    *policy,
                    *make,
                    &path,
                    setup.init_mode,
                    &mut rng,
                )?);
            }
        }
    }
    let max_of = |f: &dyn Fn(&ExoSeries) -> f64| setup.pool.iter().map(f).fold(0.0, f64::max);
    let bound = theorem_bound(&BoundInputs {
        c_a,
        p_max: max_of(&|p| p.price.iter().copied().fold(0.0, f64::max)),
        c_max: max_of(&|p| p.cost.iter().copied().fold(0.0, f64::max)),
        w_max: max_of(&|p| p.storage_weight),
        u_max: max_of(&|p| p.inbound_weight),
        horizon,
        products: cfg.sample_size,
        policies: setup.policies.len(),
        coordinators: setup.coordinators.len(),
        paths: setup.paths.len(),
        delta: cfg.delta,
    })?;

    let ref_runs: Result<Vec<Vec<SampleValues>>> = (0..cfg.reference_samples)
        .into_par_iter()
        .map(|k| sample_values(setup, cfg.sample_size, seed::derive_indexed(cfg.seed, "reference", k as u64)))
        .collect();
    let ref_runs = ref_runs?;
    let classes = ref_runs.first().map_or(0, Vec::len);
    let r = ref_runs.len().max(1) as f64;
    let mut reference = vec![SampleValues::default(); classes];
    for run in &ref_runs {
        for (acc, v) in reference.iter_mut().zip(run) {
            acc.reward += v.reward;
            acc.storage += v.storage;
            acc.inbound += v.inbound;
        }
    }
    for acc in &mut reference {
        acc.reward /= r;
        acc.storage /= r;
        acc.inbound /= r;
    }

    let gaps: Result<Vec<SampleValues>> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let vals = sample_values(setup, cfg.sample_size, seed::derive_indexed(cfg.seed, "trial", k as u64))?;
            let mut g = SampleValues::default();
            for (v, m) in vals.iter().zip(&reference) {
                g.reward = g.reward.max((v.reward - m.reward).abs());
                g.storage = g.storage.max((v.storage - m.storage).abs());
                g.inbound = g.inbound.max((v.inbound - m.inbound).abs());
            }
            Ok(g)
        })
        .collect();
    Ok(GeneralizationReport {
        c_a,
        bound,
        reference,
        gaps: gaps?,
    })
}
