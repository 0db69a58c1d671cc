use serde::{Deserialize, Serialize};

use super::{
    penalized_reward, CapacityPath, ExoSeries, InventoryState, LedgerRow,
    PriceTrajectory, RolloutLedger,
};
use crate::error::{Error, Result};
use crate::tape::Var;

/// Everything a buying policy may look at when ordering for one product.
///
/// Demand is only observable strictly before `week`; economics and lead time
/// of the current week are known when ordering.
pub struct PolicyInput<'a> {
    pub week: usize,
    pub product: usize,
    pub series: &'a ExoSeries,
    pub state: &'a InventoryState,
    pub past_actions: &'a [Var],
    pub prices: &'a PriceTrajectory,
    pub price_history: &'a [PriceTrajectory],
}

impl PolicyInput<'_> {
    pub fn trailing_demand(&self, window: usize) -> Vec<f64> {
        self.series.trailing_demand(self.week, window)
    }

    pub fn price(&self) -> f64 {
        self.series.price[self.week]
    }

    pub fn cost(&self) -> f64 {
        self.series.cost[self.week]
    }

    pub fn lead_time(&self) -> u32 {
        self.series.lead_time[self.week]
    }
}

pub trait Policy {
    fn act(&self, input: &PolicyInput<'_>) -> Result<Var>;
}

/// Population totals of one finished week; quantities are scaled by the
/// rollout's aggregate scale.
#[derive(Clone, Copy, Debug)]
pub struct AggregateWeek {
    pub orders: Var,
    /// `Σ w·I_t`.
    pub storage: Var,
    /// `Σ u·J_t`.
    pub inbound: Var,
    pub demand: f64,
    /// `Σ w·D_t`.
    pub demand_volume: f64,
    pub fulfilled: Var,
}

/// Snapshot handed to a coordinator at the start of `week`.
pub struct CoordinatorView<'a> {
    pub week: usize,
    pub products: &'a [ExoSeries],
    pub states: &'a [InventoryState],
    /// Past actions per product.
    pub actions: &'a [Vec<Var>],
    pub path: &'a CapacityPath,
    pub history: &'a [AggregateWeek],
    pub announcements: &'a [PriceTrajectory],
    pub aggregate_scale: f64,
    pub gamma: f64,
}

pub trait Coordinator {
    /// Number of forecast entries `L` in each announcement.
    fn forecast_len(&self) -> usize;

    fn announce(&mut self, view: &CoordinatorView<'_>) -> Result<PriceTrajectory>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Empty warehouse and pipeline.
    #[default]
    Zero,
    /// One week of mean historical demand on hand plus one per lead-time week in flight.
    OnhandWithInflight,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct InitialInventory {
    pub onhand: f64,
    pub pipeline: Vec<(usize, f64)>,
}

pub fn initial_inventory(series: &ExoSeries, mode: InitMode) -> InitialInventory {
    match mode {
        InitMode::Zero => InitialInventory::default(),
        InitMode::OnhandWithInflight => {
            let h = &series.demand_history;
            let mean = if h.is_empty() {
                0.0
            } else {
                h.iter().sum::<f64>() / h.len() as f64
            };
            let lead = series.lead_time.first().copied().unwrap_or(1).max(1) as usize;
            InitialInventory {
                onhand: mean,
                pipeline: (0..lead).map(|w| (w, mean)).collect(),
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutOptions {
    pub gamma: f64,
    /// Multiplier from the simulated products to the full population, e.g. `N/M`
    /// for a minibatch.
    pub aggregate_scale: f64,
    /// Stop after this many weeks instead of the full horizon.
    pub weeks: Option<usize>,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            gamma: 1.0,
            aggregate_scale: 1.0,
            weeks: None,
        }
    }
}

/// Taped output of a rollout.
#[derive(Debug)]
pub struct Rollout {
    pub ledger: RolloutLedger,
    /// `Σ_t γ^t Σ_i R^λ`.
    pub objective: Var,
    /// `Σ_t γ^t Σ_i R`.
    pub reward: Var,
    /// Scaled `Ĩ_t`.
    pub storage: Vec<Var>,
    /// Scaled `J̃_t`.
    pub inbound: Vec<Var>,
    pub announcements: Vec<PriceTrajectory>,
}

/// A rollout that can be advanced one week at a time.
pub struct Simulation<'a> {
    products: &'a [ExoSeries],
    path: &'a CapacityPath,
    opts: RolloutOptions,
    weeks: usize,
    week: usize,
    discount: f64,
    states: Vec<InventoryState>,
    actions: Vec<Vec<Var>>,
    rows: Vec<Vec<LedgerRow>>,
    history: Vec<AggregateWeek>,
    announcements: Vec<PriceTrajectory>,
    objective: Var,
    reward: Var,
    initial_onhand: Vec<f64>,
    raw_storage: Vec<f64>,
    raw_inbound: Vec<f64>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        products: &'a [ExoSeries],
        initial: &[InitialInventory],
        path: &'a CapacityPath,
        opts: RolloutOptions,
    ) -> Result<Self> {
        let horizon = products
            .first()
            .map(ExoSeries::horizon)
            .ok_or_else(|| Error::Contract("rollout needs at least one product".into()))?;
        for p in products {
            p.validate()?;
            if p.horizon() != horizon {
                return Err(Error::HorizonMismatch {
                    expected: horizon,
                    found: p.horizon(),
                });
            }
        }
        if path.len() != horizon {
            return Err(Error::HorizonMismatch {
                expected: horizon,
                found: path.len(),
            });
        }
        if initial.len() != products.len() {
            return Err(Error::LengthMismatch {
                what: "initial inventories",
                expected: products.len(),
                found: initial.len(),
            });
        }
        let weeks = opts.weeks.unwrap_or(horizon);
        if weeks > horizon {
            return Err(Error::Horizon {
                week: weeks,
                horizon,
            });
        }
        if !(opts.gamma > 0.0 && opts.gamma <= 1.0) || !(opts.aggregate_scale > 0.0) {
            return Err(Error::Config(format!(
                "discount must lie in (0, 1] and aggregate scale be positive, got {} and {}",
                opts.gamma, opts.aggregate_scale
            )));
        }
        let states = initial
            .iter()
            .map(|k| InventoryState::new(k.onhand, &k.pipeline))
            .collect::<Result<Vec<_>>>()?;
        let n = products.len();
        Ok(Simulation {
            products,
            path,
            opts,
            weeks,
            week: 0,
            discount: 1.0,
            states,
            actions: vec![Vec::with_capacity(weeks); n],
            rows: vec![Vec::with_capacity(weeks); n],
            history: Vec::with_capacity(weeks),
            announcements: Vec::with_capacity(weeks),
            objective: Var::constant(0.0),
            reward: Var::constant(0.0),
            initial_onhand: initial.iter().map(|k| k.onhand).collect(),
            raw_storage: Vec::with_capacity(weeks),
            raw_inbound: Vec::with_capacity(weeks),
        })
    }

    pub fn week(&self) -> usize {
        self.week
    }

    pub fn weeks(&self) -> usize {
        self.weeks
    }

    pub fn done(&self) -> bool {
        self.week >= self.weeks
    }

    pub fn states(&self) -> &[InventoryState] {
        &self.states
    }

    pub fn history(&self) -> &[AggregateWeek] {
        &self.history
    }

    pub fn view(&self) -> CoordinatorView<'_> {
        CoordinatorView {
            week: self.week,
            products: self.products,
            states: &self.states,
            actions: &self.actions,
            path: self.path,
            history: &self.history,
            announcements: &self.announcements,
            aggregate_scale: self.opts.aggregate_scale,
            gamma: self.opts.gamma,
        }
    }

    /// Advances every product by one week under the given announcement.
    pub fn step_week(&mut self, policy: &dyn Policy, prices: PriceTrajectory) -> Result<()> {
        let t = self.week;
        if t >= self.weeks {
            return Err(Error::Horizon {
                week: t,
                horizon: self.weeks,
            });
        }
        let expected = self
            .announcements
            .first()
            .map_or(prices.forecast_len(), PriceTrajectory::forecast_len);
        prices.validate(expected)?;
        let scale = self.opts.aggregate_scale;
        let n = self.products.len();
        let mut orders = Vec::with_capacity(n);
        let mut storage = Vec::with_capacity(n);
        let mut inbound = Vec::with_capacity(n);
        let mut fulfilled = Vec::with_capacity(n);
        let mut penalized = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut demand = 0.0;
        let mut demand_volume = 0.0;
        let mut raw_storage = 0.0;
        let mut raw_inbound = 0.0;
        for i in 0..n {
            let series = &self.products[i];
            let action = policy.act(&PolicyInput {
                week: t,
                product: i,
                series,
                state: &self.states[i],
                past_actions: &self.actions[i],
                prices: &prices,
                price_history: &self.announcements,
            })?;
            if !action.value().is_finite() {
                return Err(Error::numeric(format!(
                    "policy returned {} for product {i} at week {t}",
                    action.value()
                )));
            }
            let exo = series.week(t)?;
            let rec = self.states[i].advance(&exo, action, t)?;
            let pen = penalized_reward(
                &rec,
                (series.storage_weight, series.inbound_weight),
                prices.current,
            );
            self.rows[i].push(LedgerRow {
                week: t,
                demand: exo.demand,
                action: action.value(),
                arrivals: rec.arrivals.value(),
                onhand_start: rec.onhand_start.value(),
                onhand_end: rec.onhand_end.value(),
                fulfilled: rec.fulfilled.value(),
                reward: rec.reward.value(),
                penalized_reward: pen.value(),
            });
            self.actions[i].push(action);
            orders.push(action);
            storage.push(rec.onhand_end * series.storage_weight);
            inbound.push(rec.arrivals * series.inbound_weight);
            fulfilled.push(rec.fulfilled);
            penalized.push(pen);
            rewards.push(rec.reward);
            raw_storage += rec.onhand_end.value() * series.storage_weight;
            raw_inbound += rec.arrivals.value() * series.inbound_weight;
            demand += exo.demand;
            demand_volume += exo.demand * series.storage_weight;
        }
        self.history.push(AggregateWeek {
            orders: Var::sum_slice(&orders) * scale,
            storage: Var::sum_slice(&storage) * scale,
            inbound: Var::sum_slice(&inbound) * scale,
            demand: demand * scale,
            demand_volume: demand_volume * scale,
            fulfilled: Var::sum_slice(&fulfilled) * scale,
        });
        self.raw_storage.push(raw_storage);
        self.raw_inbound.push(raw_inbound);
        self.objective += Var::sum_slice(&penalized) * self.discount;
        self.reward += Var::sum_slice(&rewards) * self.discount;
        self.announcements.push(prices);
        self.discount *= self.opts.gamma;
        self.week += 1;
        Ok(())
    }

    /// Asks the coordinator for this week's prices, then steps.
    pub fn run_week(&mut self, policy: &dyn Policy, coordinator: &mut dyn Coordinator) -> Result<()> {
        let prices = coordinator.announce(&self.view())?;
        if prices.forecast_len() != coordinator.forecast_len() {
            return Err(Error::LengthMismatch {
                what: "price forecast",
                expected: coordinator.forecast_len(),
                found: prices.forecast_len(),
            });
        }
        self.step_week(policy, prices)
    }

    pub fn finish(self) -> Rollout {
        let scale = self.opts.aggregate_scale;
        let storage: Vec<Var> = self.history.iter().map(|h| h.storage).collect();
        let inbound: Vec<Var> = self.history.iter().map(|h| h.inbound).collect();
        let weeks = self.week;
        let limits = CapacityPath {
            storage: self.path.storage[..weeks].to_vec(),
            inbound: self.path.inbound[..weeks].to_vec(),
        };
        let ledger = RolloutLedger {
            gamma: self.opts.gamma,
            aggregate_scale: scale,
            storage_weights: self.products.iter().map(|p| p.storage_weight).collect(),
            inbound_weights: self.products.iter().map(|p| p.inbound_weight).collect(),
            initial_onhand: self.initial_onhand,
            undelivered: self.states.iter().map(InventoryState::in_flight).collect(),
            agg_storage: self.raw_storage,
            agg_inbound: self.raw_inbound,
            limits,
            prices: self.announcements.iter().map(PriceTrajectory::values).collect(),
            rows: self.rows,
        };
        Rollout {
            ledger,
            objective: self.objective,
            reward: self.reward,
            storage,
            inbound,
            announcements: self.announcements,
        }
    }
}

/// Runs `policy` against `coordinator` over the horizon.
pub fn rollout(
    products: &[ExoSeries],
    initial: &[InitialInventory],
    policy: &dyn Policy,
    coordinator: &mut dyn Coordinator,
    path: &CapacityPath,
    opts: RolloutOptions,
) -> Result<Rollout> {
    let mut sim = Simulation::new(products, initial, path, opts)?;
    while !sim.done() {
        sim.run_week(policy, coordinator)?;
    }
    Ok(sim.finish())
}
