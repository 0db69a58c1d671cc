//! Coordination mechanisms: fixed price schedules, receding-horizon dual
//! search, and a neural price forecaster.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idp::{
    arrival_week, Coordinator, CoordinatorView, ExoSeries, PriceTrajectory, WEEKS_PER_YEAR,
};
use crate::mlp::{Activation, Mlp};
use crate::policies::{base_stock_action, BaseStockConfig, BaseStockInputs};
use crate::seed;
use crate::tape::{ParamVector, Var};

/// Announces zero prices every week.
#[derive(Clone, Copy, Debug)]
pub struct ZeroPrice {
    pub forecast_len: usize,
}

impl Coordinator for ZeroPrice {
    fn forecast_len(&self) -> usize {
        self.forecast_len
    }

    fn announce(&mut self, _: &CoordinatorView<'_>) -> Result<PriceTrajectory> {
        Ok(PriceTrajectory::zeros(self.forecast_len))
    }
}

/// Replays a fixed cost sequence `λ′` regardless of history.
#[derive(Clone, Debug)]
pub struct TeacherForcing {
    costs: Vec<[f64; 2]>,
    forecast_len: usize,
}

impl TeacherForcing {
    /// `costs` covers the horizon; lookups past the end repeat its last entry.
    pub fn new(costs: Vec<[f64; 2]>, horizon: usize, forecast_len: usize) -> Result<Self> {
        if costs.len() != horizon && costs.len() != horizon + forecast_len {
            return Err(Error::LengthMismatch {
                what: "teacher-forced costs",
                expected: horizon,
                found: costs.len(),
            });
        }
        if costs.iter().flatten().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::Contract("teacher-forced costs must be nonnegative".into()));
        }
        Ok(TeacherForcing {
            costs,
            forecast_len,
        })
    }

    pub fn cost(&self, week: usize) -> [f64; 2] {
        self.costs[week.min(self.costs.len() - 1)]
    }

    /// The literal output tuple `(λ′_t, λ′_t, λ′_{t+1}, …, λ′_{t+L})`.
    pub fn tuple(&self, week: usize) -> Vec<[f64; 2]> {
        let mut out = vec![self.cost(week)];
        out.extend((0..=self.forecast_len).map(|l| self.cost(week + l)));
        out
    }

    pub fn trajectory(&self, week: usize) -> PriceTrajectory {
        let forecast: Vec<[f64; 2]> = (1..=self.forecast_len).map(|l| self.cost(week + l)).collect();
        PriceTrajectory::constant(self.cost(week), &forecast)
    }
}

impl Coordinator for TeacherForcing {
    fn forecast_len(&self) -> usize {
        self.forecast_len
    }

    fn announce(&mut self, view: &CoordinatorView<'_>) -> Result<PriceTrajectory> {
        Ok(self.trajectory(view.week))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualSearchConfig {
    /// Planning horizon `H`; announcements carry `H − 1` forecast entries.
    pub horizon: usize,
    pub steps: usize,
    /// Initial step; divided by the mean limit so residuals enter relatively.
    pub step0: f64,
    pub decay: f64,
    /// Stop once every relative residual is below this and every positive
    /// price has its constraint within it.
    pub tolerance: f64,
    /// Demand scenarios averaged per residual evaluation.
    pub samples: usize,
    /// Upper end of the price projection; defaults to the largest `p/w` or `p/u`.
    pub price_cap: Option<f64>,
    /// Report the iterate with the lowest dual objective instead of the last one.
    pub keep_best: bool,
}

impl Default for DualSearchConfig {
    fn default() -> Self {
        DualSearchConfig {
            horizon: 5,
            steps: 30,
            step0: 2.0,
            decay: 0.1,
            tolerance: 0.01,
            samples: 8,
            price_cap: None,
            keep_best: false,
        }
    }
}

impl DualSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.steps == 0 || self.samples == 0 {
            return Err(Error::Config("horizon, steps and samples must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) || !(self.step0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::Config("tolerance and step must be positive".into()));
        }
        Ok(())
    }
}

/// Aggregate usage and objective of a simulated plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    /// Scaled `[Ĩ_s, J̃_s]` for `s = 0..H`.
    pub usage: Vec<[f64; 2]>,
    /// `Σ_s γ^s Σ_i R^λ` of the plan.
    pub penalized: f64,
}

/// Simulates the population forward under candidate prices.
pub trait InnerPlanner {
    /// `demand[i][s]` is product `i`'s demand `s` weeks ahead and `prices[s]`
    /// the price pair for that week.
    fn plan(
        &self,
        view: &CoordinatorView<'_>,
        demand: &[Vec<f64>],
        prices: &[[f64; 2]],
    ) -> Result<PlanOutcome>;
}

fn econ(series: &ExoSeries, week: usize) -> (f64, f64, u32) {
    let i = week.min(series.horizon() - 1);
    (series.price[i], series.cost[i], series.lead_time[i])
}

/// Prices seen `s` weeks into a plan: entries `s..H`, padded with the last.
fn shifted(prices: &[[f64; 2]], s: usize) -> Vec<[f64; 2]> {
    let h = prices.len();
    (0..h).map(|l| prices[(s + l).min(h - 1)]).collect()
}

/// A plain-value copy of one product's inventory.
#[derive(Clone, Debug)]
struct PlainState {
    onhand: f64,
    pipeline: BTreeMap<usize, f64>,
}

impl PlainState {
    fn of(view: &CoordinatorView<'_>, i: usize) -> Self {
        let s = &view.states[i];
        PlainState {
            onhand: s.onhand.value(),
            pipeline: s.pipeline.iter().map(|(&k, v)| (k, v.value())).collect(),
        }
    }

    fn position(&self) -> f64 {
        self.onhand + self.pipeline.values().sum::<f64>()
    }

    /// Returns `(arrivals, onhand_end, reward)`.
    fn advance(&mut self, week: usize, demand: f64, action: f64, p: f64, c: f64, lead: u32) -> (f64, f64, f64) {
        let arrivals = self.pipeline.remove(&week).unwrap_or(0.0);
        let start = self.onhand + arrivals;
        let fulfilled = demand.min(start);
        self.onhand = (start - demand).max(0.0);
        if action > 0.0 {
            *self.pipeline.entry(arrival_week(week, lead)).or_insert(0.0) += action;
        }
        (arrivals, self.onhand, p * fulfilled - c * action)
    }
}

/// Base-stock inner policy with demand statistics frozen at the planning week.
#[derive(Clone, Debug, Default)]
pub struct BaseStockPlanner {
    pub cfg: BaseStockConfig,
}

impl InnerPlanner for BaseStockPlanner {
    fn plan(
        &self,
        view: &CoordinatorView<'_>,
        demand: &[Vec<f64>],
        prices: &[[f64; 2]],
    ) -> Result<PlanOutcome> {
        let h = prices.len();
        let t = view.week;
        let shifted: Vec<Vec<[f64; 2]>> = (0..h).map(|s| shifted(prices, s)).collect();
        let mut usage = vec![[0.0; 2]; h];
        let mut penalized = 0.0;
        for (i, series) in view.products.iter().enumerate() {
            let window = series.trailing_demand(t, self.cfg.forecast_window);
            let mut st = PlainState::of(view, i);
            let (w, u) = (series.storage_weight, series.inbound_weight);
            let mut disc = 1.0;
            for s in 0..h {
                let week = t + s;
                let (p, c, lead) = econ(series, week);
                let a = base_stock_action(
                    &BaseStockInputs {
                        demand_window: &window,
                        lead_time: lead,
                        price: p,
                        cost: c,
                        storage_weight: w,
                        inbound_weight: u,
                        prices: &shifted[s],
                        position: st.position(),
                    },
                    &self.cfg,
                );
                let (j, inv, r) = st.advance(week, demand[i][s], a, p, c, lead);
                usage[s][0] += w * inv;
                usage[s][1] += u * j;
                penalized += disc * (r - prices[s][0] * w * inv - prices[s][1] * u * j);
                disc *= view.gamma;
            }
        }
        for u in &mut usage {
            u[0] *= view.aggregate_scale;
            u[1] *= view.aggregate_scale;
        }
        Ok(PlanOutcome {
            usage,
            penalized: penalized * view.aggregate_scale,
        })
    }
}

/// Exact per-product best response over a finite action grid.
///
/// Every product enumerates all `|grid|^H` order sequences; this is only
/// usable on tiny instances.
#[derive(Clone, Debug)]
pub struct GridPlanner {
    pub grid: Vec<f64>,
}

impl InnerPlanner for GridPlanner {
    fn plan(
        &self,
        view: &CoordinatorView<'_>,
        demand: &[Vec<f64>],
        prices: &[[f64; 2]],
    ) -> Result<PlanOutcome> {
        let h = prices.len();
        let g = self.grid.len();
        let combos = g
            .checked_pow(h as u32)
            .filter(|&n| n <= 1 << 22)
            .ok_or_else(|| Error::Contract("action grid too large to enumerate".into()))?;
        let t = view.week;
        let mut usage = vec![[0.0; 2]; h];
        let mut penalized = 0.0;
        for (i, series) in view.products.iter().enumerate() {
            let (w, u) = (series.storage_weight, series.inbound_weight);
            let start = PlainState::of(view, i);
            let mut best: Option<(f64, Vec<[f64; 2]>)> = None;
            for code in 0..combos {
                let mut st = start.clone();
                let mut c = code;
                let mut value = 0.0;
                let mut disc = 1.0;
                let mut use_i = vec![[0.0; 2]; h];
                for s in 0..h {
                    let a = self.grid[c % g];
                    c /= g;
                    let (p, cost, lead) = econ(series, t + s);
                    let (j, inv, r) = st.advance(t + s, demand[i][s], a, p, cost, lead);
                    value += disc * (r - prices[s][0] * w * inv - prices[s][1] * u * j);
                    use_i[s] = [w * inv, u * j];
                    disc *= view.gamma;
                }
                if best.as_ref().map_or(true, |(b, _)| value > *b) {
                    best = Some((value, use_i));
                }
            }
            let (value, use_i) = best.expect("grid is nonempty");
            penalized += value;
            for s in 0..h {
                usage[s][0] += use_i[s][0];
                usage[s][1] += use_i[s][1];
            }
        }
        Ok(PlanOutcome {
            usage: usage
                .into_iter()
                .map(|[a, b]| [a * view.aggregate_scale, b * view.aggregate_scale])
                .collect(),
            penalized: penalized * view.aggregate_scale,
        })
    }
}

/// Source of demand scenarios for the planning window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DemandForecaster {
    /// Weekly demands resampled from the trailing window.
    TrailingBootstrap { window: usize },
    /// The realized future; a single scenario.
    Oracle,
}

impl Default for DemandForecaster {
    fn default() -> Self {
        DemandForecaster::TrailingBootstrap { window: 8 }
    }
}

impl DemandForecaster {
    /// Scenarios indexed `[sample][product][week ahead]`.
    pub fn scenarios(
        &self,
        view: &CoordinatorView<'_>,
        horizon: usize,
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let t = view.week;
        match *self {
            DemandForecaster::Oracle => {
                let one = view
                    .products
                    .iter()
                    .map(|p| {
                        (0..horizon)
                            .map(|s| p.demand[(t + s).min(p.horizon() - 1)])
                            .collect()
                    })
                    .collect();
                Ok(vec![one])
            }
            DemandForecaster::TrailingBootstrap { window } => {
                if window == 0 {
                    return Err(Error::Config("forecast window must be positive".into()));
                }
                let windows: Vec<Vec<f64>> = view
                    .products
                    .iter()
                    .map(|p| p.trailing_demand(t, window))
                    .collect();
                Ok((0..samples)
                    .map(|_| {
                        windows
                            .iter()
                            .map(|w| {
                                (0..horizon)
                                    .map(|_| {
                                        if w.is_empty() {
                                            0.0
                                        } else {
                                            w[rng.gen_range(0..w.len())]
                                        }
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualSearchResult {
    /// `H` price pairs, current first.
    pub prices: Vec<[f64; 2]>,
    /// `mean penalized value + Σ_s γ^s λ_s·K_s` at `prices`.
    pub dual_objective: f64,
    /// Mean `usage − limit` at `prices`; zero where the limit is infinite.
    pub residuals: Vec<[f64; 2]>,
    pub steps: usize,
    pub converged: bool,
}

impl DualSearchResult {
    pub fn trajectory(&self) -> PriceTrajectory {
        PriceTrajectory::constant(self.prices[0], &self.prices[1..])
    }
}

fn default_cap(products: &[ExoSeries]) -> f64 {
    let mut cap: f64 = 0.0;
    for p in products {
        let pmax = p.price.iter().cloned().fold(0.0, f64::max);
        for w in [p.storage_weight, p.inbound_weight] {
            if w > 0.0 {
                cap = cap.max(pmax / w);
            }
        }
    }
    if cap > 0.0 {
        cap
    } else {
        1.0
    }
}

/// Projected dual ascent on the planning window starting at `view.week`.
pub fn dual_search(
    view: &CoordinatorView<'_>,
    planner: &dyn InnerPlanner,
    scenarios: &[Vec<Vec<f64>>],
    cfg: &DualSearchConfig,
    warm_start: Option<&[[f64; 2]]>,
) -> Result<DualSearchResult> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(Error::Contract("dual search needs at least one demand scenario".into()));
    }
    let h = cfg.horizon;
    let t = view.week;
    let limits: Vec<[f64; 2]> = (0..h).map(|s| view.path.limit(t + s)).collect();
    let mut scale = [1.0; 2];
    for (r, sc) in scale.iter_mut().enumerate() {
        let finite: Vec<f64> = limits.iter().map(|k| k[r]).filter(|k| k.is_finite()).collect();
        if !finite.is_empty() {
            let m = finite.iter().sum::<f64>() / finite.len() as f64;
            *sc = if m > 0.0 { m } else { 1.0 };
        }
    }
    let cap = cfg.price_cap.unwrap_or_else(|| default_cap(view.products));
    let mut lambda: Vec<[f64; 2]> = (0..h)
        .map(|s| {
            let warm = warm_start
                .and_then(|w| w.get(s).or(w.last()))
                .copied()
                .unwrap_or([0.0; 2]);
            [0, 1].map(|r| if limits[s][r].is_finite() { warm[r].clamp(0.0, cap) } else { 0.0 })
        })
        .collect();

    let evaluate = |lambda: &[[f64; 2]]| -> Result<(f64, Vec<[f64; 2]>)> {
        let mut mean_usage = vec![[0.0; 2]; h];
        let mut mean_value = 0.0;
        for d in scenarios {
            let out = planner.plan(view, d, lambda)?;
            mean_value += out.penalized;
            for s in 0..h {
                mean_usage[s][0] += out.usage[s][0];
                mean_usage[s][1] += out.usage[s][1];
            }
        }
        let n = scenarios.len() as f64;
        let mut dual = mean_value / n;
        let mut disc = 1.0;
        let mut residuals = vec![[0.0; 2]; h];
        for s in 0..h {
            for r in 0..2 {
                if limits[s][r].is_finite() {
                    residuals[s][r] = mean_usage[s][r] / n - limits[s][r];
                    dual += disc * lambda[s][r] * limits[s][r];
                }
            }
            disc *= view.gamma;
        }
        if !dual.is_finite() || residuals.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!("non-finite dual residuals at week {t}")));
        }
        Ok((dual, residuals))
    };

    let is_converged = |lambda: &[[f64; 2]], res: &[[f64; 2]]| {
        (0..h).all(|s| {
            (0..2).all(|r| {
                let rel = res[s][r] / scale[r];
                rel <= cfg.tolerance && (lambda[s][r] == 0.0 || rel.abs() <= cfg.tolerance)
            })
        })
    };

    let (mut dual, mut res) = evaluate(&lambda)?;
    let mut best = (dual, lambda.clone(), res.clone());
    let mut steps = 0;
    let mut converged = is_converged(&lambda, &res);
    while !converged && steps < cfg.steps {
        let eta = cfg.step0 / (1.0 + cfg.decay * steps as f64);
        for s in 0..h {
            for r in 0..2 {
                if limits[s][r].is_finite() {
                    lambda[s][r] = (lambda[s][r] + eta * res[s][r] / scale[r]).clamp(0.0, cap);
                }
            }
        }
        steps += 1;
        (dual, res) = evaluate(&lambda)?;
        if dual < best.0 {
            best = (dual, lambda.clone(), res.clone());
        }
        converged = is_converged(&lambda, &res);
    }
    if cfg.keep_best && !converged {
        (dual, lambda, res) = best;
    }
    Ok(DualSearchResult {
        prices: lambda,
        dual_objective: dual,
        residuals: res,
        steps,
        converged,
    })
}

/// One receding-horizon announcement: sample demand, then search.
pub fn mpc_coordinate(
    view: &CoordinatorView<'_>,
    forecaster: &DemandForecaster,
    planner: &dyn InnerPlanner,
    cfg: &DualSearchConfig,
    warm_start: Option<&[[f64; 2]]>,
    rng: &mut impl Rng,
) -> Result<DualSearchResult> {
    let scenarios = forecaster.scenarios(view, cfg.horizon, cfg.samples, rng)?;
    dual_search(view, planner, &scenarios, cfg, warm_start)
}

/// Model predictive coordinator; warm-starts each week from the previous
/// announcement shifted by one week.
pub struct Mpc<P> {
    pub cfg: DualSearchConfig,
    pub planner: P,
    pub forecaster: DemandForecaster,
    pub seed: u64,
    previous: Option<Vec<[f64; 2]>>,
    pub searches: Vec<DualSearchResult>,
}

impl<P: InnerPlanner> Mpc<P> {
    pub fn new(cfg: DualSearchConfig, planner: P, forecaster: DemandForecaster, seed: u64) -> Self {
        Mpc {
            cfg,
            planner,
            forecaster,
            seed,
            previous: None,
            searches: Vec::new(),
        }
    }
}

impl<P: InnerPlanner> Coordinator for Mpc<P> {
    fn forecast_len(&self) -> usize {
        self.cfg.horizon - 1
    }

    fn announce(&mut self, view: &CoordinatorView<'_>) -> Result<PriceTrajectory> {
        let mut rng = seed::rng(seed::derive_indexed(self.seed, "mpc-week", view.week as u64));
        let warm = self.previous.as_ref().map(|p| shifted(p, 1));
        let result = mpc_coordinate(
            view,
            &self.forecaster,
            &self.planner,
            &self.cfg,
            warm.as_deref(),
            &mut rng,
        )?;
        self.previous = Some(result.prices.clone());
        let traj = result.trajectory();
        self.searches.push(result);
        Ok(traj)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralCoordinatorConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub forecast_len: usize,
    /// Prices are `output_scale · softplus(y)`.
    pub output_scale: f64,
    pub trailing_window: usize,
}

impl Default for NeuralCoordinatorConfig {
    fn default() -> Self {
        NeuralCoordinatorConfig {
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            forecast_len: 4,
            output_scale: 1.0,
            trailing_window: 8,
        }
    }
}

/// MLP from aggregate features and the known path to `2(L+1)` prices.
#[derive(Clone, Debug)]
pub struct NeuralCoordinator {
    pub cfg: NeuralCoordinatorConfig,
    pub mlp: Mlp,
}

impl NeuralCoordinator {
    pub fn new(cfg: NeuralCoordinatorConfig) -> Result<Self> {
        if !(cfg.output_scale > 0.0) || cfg.trailing_window == 0 {
            return Err(Error::Config(
                "output scale and trailing window must be positive".into(),
            ));
        }
        let mut widths = vec![Self::feature_count(cfg.forecast_len)];
        widths.extend(&cfg.hidden);
        widths.push(2 * (cfg.forecast_len + 1));
        let mlp = Mlp::new(widths, cfg.activation)?;
        Ok(NeuralCoordinator { cfg, mlp })
    }

    pub fn feature_count(forecast_len: usize) -> usize {
        21 + 6 * forecast_len
    }

    pub fn zero_params(&self) -> ParamVector {
        self.mlp.zero_params()
    }

    /// Aggregate features at `view.week`; quantities are divided by the
    /// trailing aggregate demand (units or weighted volume as appropriate).
    pub fn features(&self, view: &CoordinatorView<'_>) -> Result<Vec<Var>> {
        let t = view.week;
        let l_max = self.cfg.forecast_len;
        let scale = view.aggregate_scale;
        let n = view.products.len();
        let means: Vec<f64> = view
            .products
            .iter()
            .map(|p| {
                let w = p.trailing_demand(t, self.cfg.trailing_window);
                if w.is_empty() {
                    0.0
                } else {
                    w.iter().sum::<f64>() / w.len() as f64
                }
            })
            .collect();
        let units = scale * means.iter().sum::<f64>() + 1.0;
        let vol_s = scale
            * view
                .products
                .iter()
                .zip(&means)
                .map(|(p, m)| p.storage_weight * m)
                .sum::<f64>()
            + 1.0;
        let vol_i = scale
            * view
                .products
                .iter()
                .zip(&means)
                .map(|(p, m)| p.inbound_weight * m)
                .sum::<f64>()
            + 1.0;

        let mut f: Vec<Var> = Vec::with_capacity(Self::feature_count(l_max));
        match view.history.last() {
            Some(h) => {
                f.push(h.orders / units);
                f.push(h.storage / vol_s);
                f.push(h.inbound / vol_i);
                f.push(Var::constant(h.demand / units));
                f.push(Var::constant(h.demand_volume / vol_s));
                f.push(h.fulfilled / units);
            }
            None => f.extend([Var::constant(0.0); 6]),
        }

        let mut onhand_vol = Vec::with_capacity(n);
        let mut pipe_vol = Vec::with_capacity(n);
        for (p, s) in view.products.iter().zip(view.states) {
            onhand_vol.push(s.onhand * p.storage_weight);
            pipe_vol.push((s.position() - s.onhand) * p.storage_weight);
        }
        let onhand_total = Var::sum_slice(&onhand_vol) * scale;
        f.push(onhand_total / vol_s);
        f.push(Var::sum_slice(&pipe_vol) * (scale / vol_s));
        let next_inbound: Vec<Var> = view
            .products
            .iter()
            .zip(view.states)
            .map(|(p, s)| s.arriving_by(t) * p.inbound_weight)
            .collect();
        f.push(Var::sum_slice(&next_inbound) * (scale / vol_i));

        for l in 0..=l_max {
            let [ks, ki] = view.path.limit(t + l);
            let mut drained = Vec::with_capacity(n);
            let mut arriving = Vec::with_capacity(n);
            for ((p, s), m) in view.products.iter().zip(view.states).zip(&means) {
                drained.push(
                    (s.onhand + s.arriving_by(t + l) - (l + 1) as f64 * m) * p.storage_weight,
                );
                let due: Vec<Var> = s.pipeline.range(t + l..=t + l).map(|(_, q)| *q).collect();
                arriving.push(Var::sum_slice(&due) * p.inbound_weight);
            }
            let projected = Var::sum_slice(&drained) * scale;
            f.push(projected / vol_s);
            if ks.is_finite() {
                f.push(Var::constant(ks / vol_s));
                f.push((projected - ks) / vol_s);
            } else {
                f.extend([Var::constant(0.0); 2]);
            }
            f.push(Var::sum_slice(&arriving) * (scale / vol_i));
            f.push(Var::constant(if ki.is_finite() { ki / vol_i } else { 0.0 }));
        }

        f.push(Var::constant((vol_s - 1.0) / vol_s));
        let woy = view.products.first().map_or(0, |p| p.week_of_year(t));
        let phase = 2.0 * std::f64::consts::PI * woy as f64 / WEEKS_PER_YEAR as f64;
        f.push(Var::constant(phase.sin()));
        f.push(Var::constant(phase.cos()));

        let (mut dp, mut dc, mut dw) = (0.0, 0.0, 0.0);
        for (p, m) in view.products.iter().zip(&means) {
            let (price, cost, _) = econ(p, t);
            dp += m * price;
            dc += m * cost;
            dw += m;
        }
        if dw > 0.0 {
            f.push(Var::constant(dp / dw / 10.0));
            f.push(Var::constant(if dp > 0.0 { 1.0 - dc / dp } else { 0.0 }));
        } else {
            f.extend([Var::constant(0.0); 2]);
        }

        let inv_scale = 1.0 / self.cfg.output_scale;
        match view.announcements.last() {
            Some(a) => {
                f.push(a.current[0] * inv_scale);
                f.push(a.current[1] * inv_scale);
                for l in 1..=l_max {
                    f.push(a.at(l)[0] * inv_scale);
                }
            }
            None => f.extend(std::iter::repeat(Var::constant(0.0)).take(l_max + 2)),
        }
        debug_assert_eq!(f.len(), Self::feature_count(l_max));
        for (k, v) in f.iter().enumerate() {
            if !v.value().is_finite() {
                return Err(Error::numeric(format!(
                    "coordinator feature {k} is {} at week {t}",
                    v.value()
                )));
            }
        }
        Ok(f)
    }

    /// Prices `[l][resource]` from a feature vector; masked entries are 0.
    pub fn outputs_from_features(&self, params: &[Var], features: &[Var], mask: &[[bool; 2]]) -> Vec<[Var; 2]> {
        let y = self.mlp.forward(params, features);
        (0..=self.cfg.forecast_len)
            .map(|l| {
                [0, 1].map(|r| {
                    if mask[l][r] {
                        y[2 * l + r].softplus() * self.cfg.output_scale
                    } else {
                        Var::constant(0.0)
                    }
                })
            })
            .collect()
    }

    /// Announcement from features; resources without a finite limit get price 0.
    pub fn announce_with(&self, params: &[Var], view: &CoordinatorView<'_>) -> Result<PriceTrajectory> {
        let f = self.features(view)?;
        let mask: Vec<[bool; 2]> = (0..=self.cfg.forecast_len)
            .map(|l| view.path.limit(view.week + l).map(f64::is_finite))
            .collect();
        let mut pairs = self.outputs_from_features(params, &f, &mask);
        let current = pairs[0];
        Ok(PriceTrajectory {
            current,
            forecast: pairs.split_off(1),
        })
    }
}

/// A [`NeuralCoordinator`] with bound parameters.
pub struct BoundCoordinator<'a> {
    pub coordinator: &'a NeuralCoordinator,
    pub params: &'a [Var],
}

impl Coordinator for BoundCoordinator<'_> {
    fn forecast_len(&self) -> usize {
        self.coordinator.cfg.forecast_len
    }

    fn announce(&mut self, view: &CoordinatorView<'_>) -> Result<PriceTrajectory> {
        self.coordinator.announce_with(self.params, view)
    }
}
