//! Exogenous inputs and the shared inventory/reward dynamics.
//!
//! Each product follows lost-sales periodic-review dynamics: orders placed in
//! week `t` with lead time `v` arrive at the start of week `t + v`, demand is
//! served from on-hand stock after arrivals, and unmet demand vanishes.

mod ledger;
mod rollout;

pub use ledger::{LedgerRow, RolloutLedger};
pub use rollout::{
    initial_inventory, rollout, AggregateWeek, Coordinator, CoordinatorView, InitMode,
    InitialInventory, Policy, PolicyInput, Rollout, RolloutOptions, Simulation,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Var;

/// Weeks per seasonal cycle.
pub const WEEKS_PER_YEAR: usize = 52;

/// Per-product exogenous path.
#[derive(Clone, Debug, PartialEq)]
pub struct ExoSeries {
    pub demand: Vec<f64>,
    pub price: Vec<f64>,
    pub cost: Vec<f64>,
    pub lead_time: Vec<u32>,
    pub storage_weight: f64,
    pub inbound_weight: f64,
    /// Demand observed before week 0, oldest first. Only read by features.
    pub demand_history: Vec<f64>,
    /// Week of year of week 0.
    pub calendar_offset: usize,
}

/// One week's slice of an [`ExoSeries`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExoWeek {
    pub demand: f64,
    pub price: f64,
    pub cost: f64,
    pub lead_time: u32,
    pub storage_weight: f64,
    pub inbound_weight: f64,
    pub horizon: usize,
}

impl ExoSeries {
    pub fn validate(&self) -> Result<()> {
        let t = self.demand.len();
        if t == 0 {
            return Err(Error::Contract("series horizon must be positive".into()));
        }
        for (what, len) in [
            ("price", self.price.len()),
            ("cost", self.cost.len()),
            ("lead_time", self.lead_time.len()),
        ] {
            if len != t {
                return Err(Error::LengthMismatch {
                    what,
                    expected: t,
                    found: len,
                });
            }
        }
        let nonneg = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !nonneg(&self.demand)
            || !nonneg(&self.price)
            || !nonneg(&self.cost)
            || !nonneg(&self.demand_history)
        {
            return Err(Error::Contract(
                "demand, price and cost must be finite and nonnegative".into(),
            ));
        }
        if !(self.storage_weight.is_finite() && self.storage_weight >= 0.0)
            || !(self.inbound_weight.is_finite() && self.inbound_weight >= 0.0)
        {
            return Err(Error::Contract("weights must be finite and nonnegative".into()));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.demand.len()
    }

    pub fn week(&self, t: usize) -> Result<ExoWeek> {
        if t >= self.horizon() {
            return Err(Error::Horizon {
                week: t,
                horizon: self.horizon(),
            });
        }
        Ok(ExoWeek {
            demand: self.demand[t],
            price: self.price[t],
            cost: self.cost[t],
            lead_time: self.lead_time[t],
            storage_weight: self.storage_weight,
            inbound_weight: self.inbound_weight,
            horizon: self.horizon(),
        })
    }

    /// Demand observed strictly before week `t`, most recent last, at most `window` values.
    pub fn trailing_demand(&self, t: usize, window: usize) -> Vec<f64> {
        let t = t.min(self.horizon());
        let in_window = &self.demand[t.saturating_sub(window)..t];
        let from_history = window.saturating_sub(in_window.len()).min(self.demand_history.len());
        let mut out = Vec::with_capacity(from_history + in_window.len());
        out.extend_from_slice(&self.demand_history[self.demand_history.len() - from_history..]);
        out.extend_from_slice(in_window);
        out
    }

    pub fn week_of_year(&self, t: usize) -> usize {
        (self.calendar_offset + t) % WEEKS_PER_YEAR
    }

    pub fn mean_demand(&self) -> f64 {
        self.demand.iter().sum::<f64>() / self.horizon() as f64
    }
}

/// Week at which an order placed in `week` with lead time `lead` arrives.
///
/// Arrivals are counted at the start of a week and the ordering week's
/// arrivals have already been booked, so zero lead times behave as one week.
pub fn arrival_week(week: usize, lead: u32) -> usize {
    week + (lead.max(1) as usize)
}

/// On-hand stock and in-flight orders keyed by arrival week.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InventoryState {
    pub onhand: Var,
    pub pipeline: BTreeMap<usize, Var>,
}

impl InventoryState {
    pub fn new(onhand: f64, pipeline: &[(usize, f64)]) -> Result<Self> {
        if !(onhand.is_finite() && onhand >= 0.0) {
            return Err(Error::Contract(format!("onhand must be nonnegative, got {onhand}")));
        }
        let mut map = BTreeMap::new();
        for &(w, q) in pipeline {
            if !(q.is_finite() && q >= 0.0) {
                return Err(Error::Contract(format!("pipeline quantity {q} at week {w}")));
            }
            let e = map.entry(w).or_insert(Var::constant(0.0));
            *e += Var::constant(q);
        }
        Ok(InventoryState {
            onhand: Var::constant(onhand),
            pipeline: map,
        })
    }

    /// On-hand plus all in-flight units.
    pub fn position(&self) -> Var {
        if self.pipeline.is_empty() {
            return self.onhand;
        }
        let mut parts = Vec::with_capacity(self.pipeline.len() + 1);
        parts.push(self.onhand);
        parts.extend(self.pipeline.values().copied());
        Var::sum_slice(&parts)
    }

    /// Units arriving at or before week `upto`.
    pub fn arriving_by(&self, upto: usize) -> Var {
        let parts: Vec<Var> = self.pipeline.range(..=upto).map(|(_, q)| *q).collect();
        Var::sum_slice(&parts)
    }

    pub fn in_flight(&self) -> f64 {
        self.pipeline.values().map(|q| q.value()).sum()
    }

    /// Applies one week in place; see [`step`].
    pub fn advance(&mut self, exo: &ExoWeek, action: Var, week: usize) -> Result<StepRecord> {
        let a = action.value();
        if !a.is_finite() {
            return Err(Error::numeric(format!("action {a} at week {week}")));
        }
        if a < 0.0 {
            return Err(Error::Contract(format!("negative action {a} at week {week}")));
        }
        if week >= exo.horizon {
            return Err(Error::Horizon {
                week,
                horizon: exo.horizon,
            });
        }
        if let Some((&first, _)) = self.pipeline.iter().next() {
            if first < week {
                return Err(Error::Contract(format!(
                    "pipeline holds units due at week {first} before current week {week}"
                )));
            }
        }
        let arrivals = self.pipeline.remove(&week).unwrap_or_default();
        let onhand_start = self.onhand + arrivals;
        let demand = Var::constant(exo.demand);
        let fulfilled = demand.min(onhand_start);
        let onhand_end = (onhand_start - demand).max0();
        let reward = fulfilled * exo.price - action * exo.cost;
        let due = arrival_week(week, exo.lead_time);
        if a > 0.0 || !action.is_constant() {
            let slot = self.pipeline.entry(due).or_default();
            *slot += action;
        }
        self.onhand = onhand_end;
        Ok(StepRecord {
            week,
            demand: exo.demand,
            action,
            arrivals,
            onhand_start,
            onhand_end,
            fulfilled,
            reward,
        })
    }
}

/// Outcome of one product-week.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord {
    pub week: usize,
    pub demand: f64,
    pub action: Var,
    /// `J_t`, units arriving this week.
    pub arrivals: Var,
    /// `I_{t-}`, stock after arrivals and before demand.
    pub onhand_start: Var,
    /// `I_t`, stock at the end of the week.
    pub onhand_end: Var,
    pub fulfilled: Var,
    /// `p·min(D, I_{t-}) − c·a`.
    pub reward: Var,
}

/// Pure form of [`InventoryState::advance`].
pub fn step(
    state: &InventoryState,
    exo: &ExoWeek,
    action: Var,
    week: usize,
) -> Result<(InventoryState, StepRecord)> {
    let mut next = state.clone();
    let record = next.advance(exo, action, week)?;
    Ok((next, record))
}

/// `R − λ¹·w·I_t − λ²·u·J_t`.
pub fn penalized_reward(record: &StepRecord, weights: (f64, f64), prices: [Var; 2]) -> Var {
    let (w, u) = weights;
    record.reward - prices[0] * (record.onhand_end * w) - prices[1] * (record.arrivals * u)
}

/// Storage (`K¹`) and inbound (`K²`) limits per week.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityPath {
    pub storage: Vec<f64>,
    pub inbound: Vec<f64>,
}

/// Which shared resource a quantity refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Storage,
    Inbound,
}

impl Resource {
    pub fn index(self) -> usize {
        match self {
            Resource::Storage => 0,
            Resource::Inbound => 1,
        }
    }
}

impl CapacityPath {
    pub fn new(storage: Vec<f64>, inbound: Vec<f64>) -> Result<Self> {
        if storage.len() != inbound.len() {
            return Err(Error::LengthMismatch {
                what: "inbound limits",
                expected: storage.len(),
                found: inbound.len(),
            });
        }
        if storage.iter().chain(&inbound).any(|k| k.is_nan() || *k < 0.0) {
            return Err(Error::Contract("capacity limits must be nonnegative".into()));
        }
        Ok(CapacityPath { storage, inbound })
    }

    /// No binding limit in any week.
    pub fn unconstrained(horizon: usize) -> Self {
        CapacityPath {
            storage: vec![f64::INFINITY; horizon],
            inbound: vec![f64::INFINITY; horizon],
        }
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn series(&self, r: Resource) -> &[f64] {
        match r {
            Resource::Storage => &self.storage,
            Resource::Inbound => &self.inbound,
        }
    }

    /// Limits at `week`; weeks past the end repeat the last value.
    pub fn limit(&self, week: usize) -> [f64; 2] {
        let i = week.min(self.len().saturating_sub(1));
        [self.storage[i], self.inbound[i]]
    }

    /// Mean of the finite limits of one resource over `weeks`, if any are finite.
    pub fn mean_finite(&self, r: Resource, weeks: std::ops::Range<usize>) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for w in weeks {
            let k = self.limit(w)[r.index()];
            if k.is_finite() {
                sum += k;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Current capacity prices plus `L` announced future prices.
#[derive(Clone, Debug, PartialEq)]
pub struct PriceTrajectory {
    pub current: [Var; 2],
    pub forecast: Vec<[Var; 2]>,
}

impl PriceTrajectory {
    pub fn zeros(forecast_len: usize) -> Self {
        PriceTrajectory {
            current: [Var::constant(0.0); 2],
            forecast: vec![[Var::constant(0.0); 2]; forecast_len],
        }
    }

    pub fn constant(current: [f64; 2], forecast: &[[f64; 2]]) -> Self {
        PriceTrajectory {
            current: current.map(Var::constant),
            forecast: forecast.iter().map(|p| p.map(Var::constant)).collect(),
        }
    }

    pub fn forecast_len(&self) -> usize {
        self.forecast.len()
    }

    /// Price announced for `l` weeks ahead; `0` is the current price and
    /// offsets past the forecast repeat its last entry.
    pub fn at(&self, l: usize) -> [Var; 2] {
        if l == 0 || self.forecast.is_empty() {
            self.current
        } else {
            self.forecast[(l - 1).min(self.forecast.len() - 1)]
        }
    }

    /// Current then forecast entries, `L + 1` pairs.
    pub fn values(&self) -> Vec<[f64; 2]> {
        (0..=self.forecast_len())
            .map(|l| self.at(l).map(Var::value))
            .collect()
    }

    pub fn validate(&self, expected_len: usize) -> Result<()> {
        if self.forecast.len() != expected_len {
            return Err(Error::LengthMismatch {
                what: "price forecast",
                expected: expected_len,
                found: self.forecast.len(),
            });
        }
        for pair in std::iter::once(&self.current).chain(&self.forecast) {
            for p in pair {
                let v = p.value();
                if !v.is_finite() {
                    return Err(Error::numeric(format!("announced price {v}")));
                }
                if v < 0.0 {
                    return Err(Error::Contract(format!("negative announced price {v}")));
                }
            }
        }
        Ok(())
    }
}
