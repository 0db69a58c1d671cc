use std::io::Write;

use super::{CapacityPath, Resource};
use crate::error::Result;

/// One product-week of a finished rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerRow {
    pub week: usize,
    pub demand: f64,
    pub action: f64,
    pub arrivals: f64,
    pub onhand_start: f64,
    pub onhand_end: f64,
    pub fulfilled: f64,
    pub reward: f64,
    pub penalized_reward: f64,
}

/// Plain-value record of a rollout, indexed `[product][week]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutLedger {
    pub gamma: f64,
    /// Multiplier applied to raw aggregates before comparing with limits.
    pub aggregate_scale: f64,
    pub rows: Vec<Vec<LedgerRow>>,
    pub storage_weights: Vec<f64>,
    pub inbound_weights: Vec<f64>,
    pub initial_onhand: Vec<f64>,
    /// Units still in flight when the rollout stopped.
    pub undelivered: Vec<f64>,
    /// `Σ_i w^i I_t^i`, unscaled.
    pub agg_storage: Vec<f64>,
    /// `Σ_i u^i J_t^i`, unscaled.
    pub agg_inbound: Vec<f64>,
    pub limits: CapacityPath,
    /// Announced current price followed by the forecast, per week.
    pub prices: Vec<Vec<[f64; 2]>>,
}

impl RolloutLedger {
    pub fn products(&self) -> usize {
        self.rows.len()
    }

    pub fn weeks(&self) -> usize {
        self.agg_storage.len()
    }

    fn discounted(&self, f: impl Fn(&LedgerRow) -> f64) -> f64 {
        let mut total = 0.0;
        let mut disc = 1.0;
        for t in 0..self.weeks() {
            let week: f64 = self.rows.iter().map(|r| f(&r[t])).sum();
            total += disc * week;
            disc *= self.gamma;
        }
        total
    }

    /// `Σ_t γ^t Σ_i R^λ`.
    pub fn objective(&self) -> f64 {
        self.discounted(|r| r.penalized_reward)
    }

    /// `Σ_t γ^t Σ_i R`.
    pub fn discounted_reward(&self) -> f64 {
        self.discounted(|r| r.reward)
    }

    pub fn product_reward(&self, product: usize) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for r in &self.rows[product] {
            total += disc * r.reward;
            disc *= self.gamma;
        }
        total
    }

    /// Aggregate usage compared against limits (`scale × raw aggregate`).
    pub fn usage(&self, r: Resource) -> Vec<f64> {
        let raw = match r {
            Resource::Storage => &self.agg_storage,
            Resource::Inbound => &self.agg_inbound,
        };
        raw.iter().map(|x| x * self.aggregate_scale).collect()
    }

    /// Raw aggregates recomputed from the product rows.
    pub fn recompute_aggregates(&self) -> (Vec<f64>, Vec<f64>) {
        let mut s = vec![0.0; self.weeks()];
        let mut j = vec![0.0; self.weeks()];
        for (i, rows) in self.rows.iter().enumerate() {
            for (t, r) in rows.iter().enumerate() {
                s[t] += self.storage_weights[i] * r.onhand_end;
                j[t] += self.inbound_weights[i] * r.arrivals;
            }
        }
        (s, j)
    }

    pub fn write_rows_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "product_id",
            "week",
            "action",
            "arrivals",
            "onhand_end",
            "fulfilled",
            "reward",
            "penalized_reward",
        ])?;
        for (i, rows) in self.rows.iter().enumerate() {
            for r in rows {
                w.write_record(&[
                    i.to_string(),
                    r.week.to_string(),
                    r.action.to_string(),
                    r.arrivals.to_string(),
                    r.onhand_end.to_string(),
                    r.fulfilled.to_string(),
                    r.reward.to_string(),
                    r.penalized_reward.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_aggregates_csv<W: Write>(&self, out: W) -> Result<()> {
        let lookahead = self.prices.first().map_or(0, |p| p.len().saturating_sub(1));
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = [
            "week",
            "agg_storage",
            "agg_inbound",
            "storage_limit",
            "inbound_limit",
            "lambda_storage",
            "lambda_inbound",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=lookahead).map(|l| format!("lambda_storage_l{l}")));
        w.write_record(&header)?;
        let storage = self.usage(Resource::Storage);
        let inbound = self.usage(Resource::Inbound);
        for t in 0..self.weeks() {
            let [ks, ki] = self.limits.limit(t);
            let p = &self.prices[t];
            let mut rec = vec![
                t.to_string(),
                storage[t].to_string(),
                inbound[t].to_string(),
                ks.to_string(),
                ki.to_string(),
                p[0][0].to_string(),
                p[0][1].to_string(),
            ];
            rec.extend((1..=lookahead).map(|l| p.get(l).map_or(0.0, |x| x[0]).to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
