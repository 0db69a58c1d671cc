//! Buying policies: a price-aware base-stock rule and an MLP policy.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::idp::{Policy, PolicyInput, WEEKS_PER_YEAR};
use crate::mlp::{Activation, Mlp};
use crate::tape::{ParamVector, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseStockConfig {
    pub forecast_window: usize,
    pub service_floor: f64,
    pub service_ceiling: f64,
    /// Weeks of protection beyond the lead time.
    pub extra_weeks: u32,
}

impl Default for BaseStockConfig {
    fn default() -> Self {
        BaseStockConfig {
            forecast_window: 8,
            service_floor: 0.05,
            service_ceiling: 0.95,
            extra_weeks: 1,
        }
    }
}

impl BaseStockConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.service_floor
            && self.service_floor <= self.service_ceiling
            && self.service_ceiling < 1.0)
        {
            return Err(Error::Config(format!(
                "need 0 < floor <= ceiling < 1, got {} and {}",
                self.service_floor, self.service_ceiling
            )));
        }
        if self.forecast_window == 0 {
            return Err(Error::Config("forecast window must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs of the base-stock rule for one product-week, as plain values.
#[derive(Clone, Copy, Debug)]
pub struct BaseStockInputs<'a> {
    pub demand_window: &'a [f64],
    pub lead_time: u32,
    pub price: f64,
    pub cost: f64,
    pub storage_weight: f64,
    pub inbound_weight: f64,
    /// Current price then forecast, `[storage, inbound]` each.
    pub prices: &'a [[f64; 2]],
    pub position: f64,
}

/// `c + u·λ²₀ + w·Σ_l λ¹_l`.
pub fn effective_cost(x: &BaseStockInputs<'_>) -> f64 {
    let storage: f64 = x.prices.iter().map(|p| p[0]).sum();
    let inbound = x.prices.first().map_or(0.0, |p| p[1]);
    x.cost + x.inbound_weight * inbound + x.storage_weight * storage
}

pub fn critical_fractile(x: &BaseStockInputs<'_>, cfg: &BaseStockConfig) -> f64 {
    if x.price > 0.0 {
        ((x.price - effective_cost(x)) / x.price).clamp(cfg.service_floor, cfg.service_ceiling)
    } else {
        cfg.service_floor
    }
}

/// `q`-quantile of the sum of `k` draws resampled from `window`, by the
/// normal approximation `k·μ + z_q·√k·σ` of that bootstrap sum, floored at 0.
pub fn bootstrap_sum_quantile(window: &[f64], k: u32, q: f64) -> f64 {
    if window.is_empty() || k == 0 {
        return 0.0;
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let z = Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(q);
    let k = k as f64;
    (k * mean + z * (k * var).sqrt()).max(0.0)
}

pub fn base_stock_target(x: &BaseStockInputs<'_>, cfg: &BaseStockConfig) -> f64 {
    let q = critical_fractile(x, cfg);
    let weeks = x.lead_time.max(1) + cfg.extra_weeks;
    bootstrap_sum_quantile(x.demand_window, weeks, q)
}

/// Order-up-to quantity `max(S − position, 0)`.
pub fn base_stock_action(x: &BaseStockInputs<'_>, cfg: &BaseStockConfig) -> f64 {
    (base_stock_target(x, cfg) - x.position).max(0.0)
}

#[derive(Clone, Debug, Default)]
pub struct BaseStockPolicy {
    pub cfg: BaseStockConfig,
}

impl Policy for BaseStockPolicy {
    fn act(&self, input: &PolicyInput<'_>) -> Result<Var> {
        let window = input.trailing_demand(self.cfg.forecast_window);
        let prices = input.prices.values();
        let x = BaseStockInputs {
            demand_window: &window,
            lead_time: input.lead_time(),
            price: input.price(),
            cost: input.cost(),
            storage_weight: input.series.storage_weight,
            inbound_weight: input.series.inbound_weight,
            prices: &prices,
            position: input.state.position().value(),
        };
        Ok(Var::constant(base_stock_action(&x, &self.cfg)))
    }
}

/// Orders nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl Policy for ZeroPolicy {
    fn act(&self, _: &PolicyInput<'_>) -> Result<Var> {
        Ok(Var::constant(0.0))
    }
}

/// Replays fixed per-product action sequences.
#[derive(Clone, Debug)]
pub struct ScheduledPolicy {
    pub actions: Vec<Vec<f64>>,
}

impl Policy for ScheduledPolicy {
    fn act(&self, input: &PolicyInput<'_>) -> Result<Var> {
        self.actions
            .get(input.product)
            .and_then(|a| a.get(input.week))
            .map(|&a| Var::constant(a))
            .ok_or(Error::Horizon {
                week: input.week,
                horizon: self.actions.get(input.product).map_or(0, Vec::len),
            })
    }
}

/// A policy whose action is a differentiable function of a parameter vector.
pub trait ParametricPolicy {
    fn zero_params(&self) -> ParamVector;

    fn act_with(&self, params: &[Var], input: &PolicyInput<'_>) -> Result<Var>;
}

/// Binds parameters to a [`ParametricPolicy`].
pub struct Bound<'a, P: ?Sized> {
    pub policy: &'a P,
    pub params: &'a [Var],
}

impl<P: ParametricPolicy + ?Sized> Policy for Bound<'_, P> {
    fn act(&self, input: &PolicyInput<'_>) -> Result<Var> {
        self.policy.act_with(self.params, input)
    }
}

/// Feature map of a [`LinearPolicy`].
pub type FeatureFn = dyn Fn(&PolicyInput<'_>) -> Vec<f64> + Send + Sync;

/// `a = max(θ·x, 0)` over a caller-defined feature map.
pub struct LinearPolicy {
    pub dim: usize,
    pub features: Box<FeatureFn>,
}

impl ParametricPolicy for LinearPolicy {
    fn zero_params(&self) -> ParamVector {
        ParamVector::zeros(&[("theta", self.dim, 1)])
    }

    fn act_with(&self, params: &[Var], input: &PolicyInput<'_>) -> Result<Var> {
        let x: Vec<Var> = (self.features)(input).into_iter().map(Var::constant).collect();
        if x.len() != params.len() {
            return Err(Error::LengthMismatch {
                what: "linear policy features",
                expected: params.len(),
                found: x.len(),
            });
        }
        Ok(Var::dot(params, &x).max0())
    }
}

/// How the network output becomes an order quantity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    /// `softplus(y)`.
    #[default]
    Unit,
    /// `(trailing mean demand + 1) · softplus(y)`.
    DemandScale,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralPolicyConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output: OutputScale,
    /// Number of forecast entries `L` in announcements.
    pub forecast_len: usize,
    pub trailing_window: usize,
}

impl Default for NeuralPolicyConfig {
    fn default() -> Self {
        NeuralPolicyConfig {
            hidden: vec![16, 16],
            activation: Activation::Tanh,
            output: OutputScale::Unit,
            forecast_len: 4,
            trailing_window: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NeuralPolicy {
    pub cfg: NeuralPolicyConfig,
    pub mlp: Mlp,
}

/// Features that do not depend on the announcement: 15 plain values.
const BASE_FEATURES: usize = 15;

impl NeuralPolicy {
    pub fn new(cfg: NeuralPolicyConfig) -> Result<Self> {
        if cfg.trailing_window == 0 {
            return Err(Error::Config("trailing window must be positive".into()));
        }
        let mut widths = vec![Self::feature_count(cfg.forecast_len)];
        widths.extend(&cfg.hidden);
        widths.push(1);
        let mlp = Mlp::new(widths, cfg.activation)?;
        Ok(NeuralPolicy { cfg, mlp })
    }

    pub fn feature_count(forecast_len: usize) -> usize {
        BASE_FEATURES + forecast_len + 4
    }

    /// Per-product quantity normalizer `trailing mean demand + 1`.
    pub fn scale(&self, input: &PolicyInput<'_>) -> f64 {
        let w = input.trailing_demand(self.cfg.trailing_window);
        mean(&w) + 1.0
    }

    pub fn features(&self, input: &PolicyInput<'_>) -> Result<Vec<Var>> {
        let prices = input.prices;
        if prices.forecast_len() != self.cfg.forecast_len {
            return Err(Error::LengthMismatch {
                what: "price forecast",
                expected: self.cfg.forecast_len,
                found: prices.forecast_len(),
            });
        }
        let series = input.series;
        let window = input.trailing_demand(self.cfg.trailing_window);
        let s = mean(&window) + 1.0;
        let m = mean(&window);
        let sd = (window.iter().map(|d| (d - m).powi(2)).sum::<f64>()
            / window.len().max(1) as f64)
            .sqrt();
        let last = window.last().copied().unwrap_or(0.0);
        let lead = input.lead_time().max(1);
        let p = input.price();
        let c = input.cost();
        let inv_p = if p > 0.0 { 1.0 / p } else { 0.0 };
        let (w, u) = (series.storage_weight, series.inbound_weight);
        let phase = 2.0 * std::f64::consts::PI * series.week_of_year(input.week) as f64
            / WEEKS_PER_YEAR as f64;
        let position = input.state.position();
        let last_action = input.past_actions.last().copied().unwrap_or_default();
        let arriving_now = input.state.arriving_by(input.week);
        let prev_storage = input
            .price_history
            .last()
            .map_or(Var::constant(0.0), |h| h.current[0]);

        let mut f: Vec<Var> = Vec::with_capacity(Self::feature_count(self.cfg.forecast_len));
        f.push(input.state.onhand / s);
        f.push((position - input.state.onhand) / s);
        f.push(arriving_now / s);
        f.push(Var::constant(m / s));
        f.push(Var::constant(sd / s));
        f.push(Var::constant(last / s));
        f.push(Var::constant(lead as f64 / 4.0));
        f.push(((lead + 1) as f64 * m - position) / s);
        f.push(Var::constant((p - c) * inv_p));
        f.push(Var::constant(c * inv_p));
        f.push(Var::constant(phase.sin()));
        f.push(Var::constant(phase.cos()));
        f.push(last_action / s);
        f.push(Var::constant(s.ln() / 5.0));
        f.push(Var::constant(w.ln()));
        debug_assert_eq!(f.len(), BASE_FEATURES);
        let mut storage_sum = Vec::with_capacity(self.cfg.forecast_len + 1);
        for l in 0..=self.cfg.forecast_len {
            let x = prices.at(l)[0] * (w * inv_p);
            storage_sum.push(x);
            f.push(x);
        }
        f.push(Var::sum_slice(&storage_sum));
        f.push(prices.current[1] * (u * inv_p));
        f.push(prev_storage * (w * inv_p));
        for (k, v) in f.iter().enumerate() {
            if !v.value().is_finite() {
                return Err(Error::numeric(format!(
                    "policy feature {k} is {} for product {} at week {}",
                    v.value(),
                    input.product,
                    input.week
                )));
            }
        }
        Ok(f)
    }
}

impl ParametricPolicy for NeuralPolicy {
    fn zero_params(&self) -> ParamVector {
        self.mlp.zero_params()
    }

    fn act_with(&self, params: &[Var], input: &PolicyInput<'_>) -> Result<Var> {
        let f = self.features(input)?;
        let y = self.mlp.forward(params, &f)[0].softplus();
        Ok(match self.cfg.output {
            OutputScale::Unit => y,
            OutputScale::DemandScale => y * self.scale(input),
        })
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
