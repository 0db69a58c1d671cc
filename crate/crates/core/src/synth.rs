//! Synthetic product populations and the population CSV format.
//!
//! Mean demand scales are truncated-Pareto, weekly demand is that scale times
//! a yearly cosine season (peaking in week 48) times mean-one lognormal
//! noise. Price and cost levels are jointly Gaussian.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idp::{ExoSeries, WEEKS_PER_YEAR};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub n_products: usize,
    pub horizon: usize,
    /// Pareto tail index of the per-product demand scale.
    pub demand_tail_index: f64,
    pub price_cost_correlation: f64,
    pub seasonality_amplitude: f64,
    pub lead_time_range: [u32; 2],
    pub seed: u64,
    /// Smallest demand scale (Pareto location).
    pub demand_scale_min: f64,
    /// Scales above `demand_scale_min × demand_scale_cap` are redrawn.
    pub demand_scale_cap: f64,
    pub demand_noise_sigma: f64,
    pub price_mean: f64,
    pub price_sd: f64,
    pub cost_mean: f64,
    pub cost_sd: f64,
    /// Relative week-to-week jitter of price and cost around their levels.
    pub economics_jitter: f64,
    /// Log-sd of storage weights; `0` gives unit weights.
    pub storage_weight_sigma: f64,
    pub inbound_weight_sigma: f64,
    /// Observed weeks preceding the window.
    pub history_weeks: usize,
    /// Absolute calendar week of the first window week.
    pub window_start: i64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            n_products: 100,
            horizon: 52,
            demand_tail_index: 1.3,
            price_cost_correlation: 0.5,
            seasonality_amplitude: 0.3,
            lead_time_range: [1, 4],
            seed: 0,
            demand_scale_min: 2.0,
            demand_scale_cap: 2000.0,
            demand_noise_sigma: 0.3,
            price_mean: 10.0,
            price_sd: 1.5,
            cost_mean: 5.5,
            cost_sd: 1.0,
            economics_jitter: 0.02,
            storage_weight_sigma: 0.5,
            inbound_weight_sigma: 0.5,
            history_weeks: 26,
            window_start: 0,
        }
    }
}

/// Population role; evaluation draws a later window with a separate product seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Eval,
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.horizon == 0 {
            return bad("population horizon must be positive");
        }
        if !(self.demand_tail_index > 0.0) {
            return bad("demand tail index must be positive");
        }
        if !(-1.0..=1.0).contains(&self.price_cost_correlation) {
            return bad("price/cost correlation must lie in [-1, 1]");
        }
        if !(0.0..1.0).contains(&self.seasonality_amplitude) {
            return bad("seasonality amplitude must lie in [0, 1)");
        }
        if self.lead_time_range[0] > self.lead_time_range[1] {
            return bad("lead time range must be ordered");
        }
        if !(self.demand_scale_min > 0.0 && self.demand_scale_cap >= 1.0) {
            return bad("demand scale bounds must be positive");
        }
        for v in [
            self.demand_noise_sigma,
            self.price_sd,
            self.cost_sd,
            self.economics_jitter,
            self.storage_weight_sigma,
            self.inbound_weight_sigma,
            self.price_mean,
            self.cost_mean,
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("distribution parameters must be finite and nonnegative");
            }
        }
        Ok(())
    }

    /// Configuration of the given split. Evaluation starts one year after the
    /// end of the training window.
    pub fn for_split(&self, split: Split) -> PopulationConfig {
        match split {
            Split::Train => self.clone(),
            Split::Eval => PopulationConfig {
                seed: seed::derive(self.seed, "eval-population"),
                window_start: self.window_start
                    + self.horizon as i64
                    + self.history_weeks as i64
                    + WEEKS_PER_YEAR as i64,
                ..self.clone()
            },
        }
    }
}

/// Multiplicative season factor for an absolute calendar week.
pub fn seasonal_factor(amplitude: f64, calendar_week: i64) -> f64 {
    let phase = (calendar_week - 48).rem_euclid(WEEKS_PER_YEAR as i64) as f64;
    1.0 + amplitude * (2.0 * std::f64::consts::PI * phase / WEEKS_PER_YEAR as f64).cos()
}

fn generate_one(cfg: &PopulationConfig, index: usize) -> ExoSeries {
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "product", index as u64));
    let z = |rng: &mut seed::Rng| -> f64 { StandardNormal.sample(rng) };

    let scale = loop {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        let s = cfg.demand_scale_min * u.powf(-1.0 / cfg.demand_tail_index);
        if s <= cfg.demand_scale_min * cfg.demand_scale_cap {
            break s;
        }
    };
    let rho = cfg.price_cost_correlation;
    let (z1, z2) = (z(&mut rng), z(&mut rng));
    let price_level = (cfg.price_mean + cfg.price_sd * z1).max(0.5);
    let cost_level =
        (cfg.cost_mean + cfg.cost_sd * (rho * z1 + (1.0 - rho * rho).sqrt() * z2)).max(0.1);
    let lead = rng.gen_range(cfg.lead_time_range[0]..=cfg.lead_time_range[1]);
    let storage_weight = (cfg.storage_weight_sigma * z(&mut rng)).exp();
    let inbound_weight = (cfg.inbound_weight_sigma * z(&mut rng)).exp();

    let sigma = cfg.demand_noise_sigma;
    let first = cfg.window_start - cfg.history_weeks as i64;
    let weeks = cfg.history_weeks + cfg.horizon;
    let mut demand = Vec::with_capacity(weeks);
    for w in 0..weeks {
        let noise = (sigma * z(&mut rng) - 0.5 * sigma * sigma).exp();
        demand.push(scale * seasonal_factor(cfg.seasonality_amplitude, first + w as i64) * noise);
    }
    let mut price = Vec::with_capacity(cfg.horizon);
    let mut cost = Vec::with_capacity(cfg.horizon);
    for _ in 0..cfg.horizon {
        price.push((price_level * (1.0 + cfg.economics_jitter * z(&mut rng))).max(0.0));
        cost.push((cost_level * (1.0 + cfg.economics_jitter * z(&mut rng))).max(0.0));
    }
    let window = demand.split_off(cfg.history_weeks);
    ExoSeries {
        demand: window,
        price,
        cost,
        lead_time: vec![lead; cfg.horizon],
        storage_weight,
        inbound_weight,
        demand_history: demand,
        calendar_offset: cfg.window_start.rem_euclid(WEEKS_PER_YEAR as i64) as usize,
    }
}

pub fn generate(cfg: &PopulationConfig) -> Result<Vec<ExoSeries>> {
    cfg.validate()?;
    Ok((0..cfg.n_products)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect())
}

/// Writes history rows (blank economics) followed by window rows per product.
/// `week` holds absolute calendar weeks so the seasonal phase survives a round trip.
pub fn write_population_csv<W: Write>(
    products: &[ExoSeries],
    window_start: i64,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "product_id",
        "week",
        "demand",
        "price",
        "cost",
        "lead_time",
        "storage_weight",
        "inbound_weight",
    ])?;
    for (id, p) in products.iter().enumerate() {
        let h = p.demand_history.len() as i64;
        for (k, d) in p.demand_history.iter().enumerate() {
            w.write_record(&[
                id.to_string(),
                (window_start - h + k as i64).to_string(),
                d.to_string(),
                String::new(),
                String::new(),
                String::new(),
                p.storage_weight.to_string(),
                p.inbound_weight.to_string(),
            ])?;
        }
        for t in 0..p.horizon() {
            w.write_record(&[
                id.to_string(),
                (window_start + t as i64).to_string(),
                p.demand[t].to_string(),
                p.price[t].to_string(),
                p.cost[t].to_string(),
                p.lead_time[t].to_string(),
                p.storage_weight.to_string(),
                p.inbound_weight.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct DataRecord {
    product_id: usize,
    week: i64,
    demand: f64,
    price: Option<f64>,
    cost: Option<f64>,
    lead_time: Option<u32>,
    storage_weight: f64,
    inbound_weight: f64,
}

struct Builder {
    series: ExoSeries,
    last_week: i64,
    first_full: Option<i64>,
}

pub fn read_population_csv<R: Read>(input: R) -> Result<Vec<ExoSeries>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out: Vec<Builder> = Vec::new();
    for (line, rec) in r.deserialize::<DataRecord>().enumerate() {
        let line = line + 2;
        let rec = rec.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if rec.product_id == out.len() {
            out.push(Builder {
                series: ExoSeries {
                    demand: Vec::new(),
                    price: Vec::new(),
                    cost: Vec::new(),
                    lead_time: Vec::new(),
                    storage_weight: rec.storage_weight,
                    inbound_weight: rec.inbound_weight,
                    demand_history: Vec::new(),
                    calendar_offset: 0,
                },
                last_week: rec.week - 1,
                first_full: None,
            });
        } else if rec.product_id + 1 != out.len() {
            return Err(Error::Data(format!(
                "line {line}: product ids must be contiguous and grouped"
            )));
        }
        let b = out.last_mut().expect("pushed above");
        if rec.week != b.last_week + 1 {
            return Err(Error::Data(format!(
                "line {line}: week {} does not follow {}",
                rec.week, b.last_week
            )));
        }
        b.last_week = rec.week;
        match (rec.price, rec.cost, rec.lead_time) {
            (Some(p), Some(c), Some(v)) => {
                if b.first_full.is_none() {
                    b.first_full = Some(rec.week);
                }
                b.series.demand.push(rec.demand);
                b.series.price.push(p);
                b.series.cost.push(c);
                b.series.lead_time.push(v);
            }
            (None, None, None) if b.first_full.is_none() => b.series.demand_history.push(rec.demand),
            _ => {
                return Err(Error::Data(format!(
                    "line {line}: history rows must precede window rows and leave all economics blank"
                )))
            }
        }
    }
    let horizon = out.first().map(|b| b.series.horizon());
    out.into_iter()
        .enumerate()
        .map(|(id, mut b)| {
            let start = b
                .first_full
                .ok_or_else(|| Error::Data(format!("product {id} has no window rows")))?;
            b.series.calendar_offset = start.rem_euclid(WEEKS_PER_YEAR as i64) as usize;
            if Some(b.series.horizon()) != horizon {
                return Err(Error::Data(format!("product {id} has a different horizon")));
            }
            b.series
                .validate()
                .map_err(|e| Error::Data(format!("product {id}: {e}")))?;
            Ok(b.series)
        })
        .collect()
}

/// `Σ_i w^i · mean_t D_t^i`, the default demand anchor for capacity paths.
pub fn mean_weekly_volume(products: &[ExoSeries]) -> f64 {
    products
        .iter()
        .map(|p| p.storage_weight * p.mean_demand())
        .sum()
}
