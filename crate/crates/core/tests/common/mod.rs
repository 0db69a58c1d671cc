//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::io::Write;

use capcoord::idp::{ExoSeries, InitialInventory};
use rand::Rng;

/// Writes straight to stdout so the line survives test output capture.
pub fn report(id: &str, pass: bool, detail: impl AsRef<str>) {
    let mut out = std::io::stdout().lock();
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(out, "{id} {verdict} {}", detail.as_ref());
}

pub fn flat_product(demand: Vec<f64>, price: f64, cost: f64, lead: u32) -> ExoSeries {
    let t = demand.len();
    ExoSeries {
        demand,
        price: vec![price; t],
        cost: vec![cost; t],
        lead_time: vec![lead; t],
        storage_weight: 1.0,
        inbound_weight: 1.0,
        demand_history: vec![1.0; 4],
        calendar_offset: 0,
    }
}

pub fn random_product(rng: &mut impl Rng, horizon: usize) -> ExoSeries {
    let lead = rng.gen_range(0..=4);
    ExoSeries {
        demand: (0..horizon).map(|_| rng.gen_range(0.0..20.0)).collect(),
        price: (0..horizon).map(|_| rng.gen_range(5.0..15.0)).collect(),
        cost: (0..horizon).map(|_| rng.gen_range(1.0..5.0)).collect(),
        lead_time: vec![lead; horizon],
        storage_weight: rng.gen_range(0.1..3.0),
        inbound_weight: rng.gen_range(0.1..3.0),
        demand_history: (0..rng.gen_range(0..10)).map(|_| rng.gen_range(0.0..20.0)).collect(),
        calendar_offset: rng.gen_range(0..52),
    }
}

/// One product-week from [`resimulate`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleWeek {
    pub arrivals: f64,
    pub onhand_end: f64,
    pub fulfilled: f64,
    pub reward: f64,
}

/// Straight re-simulation of lost-sales dynamics from a fixed action sequence.
/// Orders placed at week `t` with lead `v` arrive at `t + max(v, 1)`.
pub fn resimulate(series: &ExoSeries, init: &InitialInventory, actions: &[f64]) -> Vec<OracleWeek> {
    let t_max = actions.len();
    let mut due = vec![0.0; t_max + 8];
    for &(w, q) in &init.pipeline {
        if w < due.len() {
            due[w] += q;
        }
    }
    let mut onhand = init.onhand;
    let mut out = Vec::with_capacity(t_max);
    for t in 0..t_max {
        let arrivals = due[t];
        let start = onhand + arrivals;
        let d = series.demand[t];
        let fulfilled = if d < start { d } else { start };
        onhand = start - fulfilled;
        let lead = series.lead_time[t].max(1) as usize;
        if t + lead < due.len() {
            due[t + lead] += actions[t];
        }
        out.push(OracleWeek {
            arrivals,
            onhand_end: onhand,
            fulfilled,
            reward: series.price[t] * fulfilled - series.cost[t] * actions[t],
        });
    }
    out
}

/// Per product: for every grid action sequence over `weeks`, the discounted
/// reward and per-week storage and inbound usage (weighted).
pub struct GridPlans {
    pub reward: Vec<f64>,
    pub storage: Vec<Vec<f64>>,
    pub inbound: Vec<Vec<f64>>,
    pub sequences: Vec<Vec<f64>>,
}

pub fn enumerate_plans(series: &ExoSeries, init: &InitialInventory, grid: &[f64], weeks: usize, gamma: f64) -> GridPlans {
    let mut plans = GridPlans {
        reward: Vec::new(),
        storage: Vec::new(),
        inbound: Vec::new(),
        sequences: Vec::new(),
    };
    let total = grid.len().pow(weeks as u32);
    for code in 0..total {
        let mut c = code;
        let seq: Vec<f64> = (0..weeks)
            .map(|_| {
                let a = grid[c % grid.len()];
                c /= grid.len();
                a
            })
            .collect();
        let sim = resimulate(series, init, &seq);
        let mut disc = 1.0;
        let mut r = 0.0;
        for w in &sim {
            r += disc * w.reward;
            disc *= gamma;
        }
        plans.reward.push(r);
        plans.storage.push(sim.iter().map(|w| series.storage_weight * w.onhand_end).collect());
        plans.inbound.push(sim.iter().map(|w| series.inbound_weight * w.arrivals).collect());
        plans.sequences.push(seq);
    }
    plans
}

/// Dual function `g(λ) = Σ_i max_seq [R − Σ_s γ^s λ_s·usage_s] + Σ_s γ^s λ_s·K_s`
/// for storage prices only.
pub fn storage_dual(plans: &[GridPlans], lambda: &[f64], limits: &[f64], gamma: f64) -> f64 {
    let mut total = 0.0;
    for p in plans {
        let mut best = f64::NEG_INFINITY;
        for (k, r) in p.reward.iter().enumerate() {
            let mut v = *r;
            let mut disc = 1.0;
            for (s, l) in lambda.iter().enumerate() {
                v -= disc * l * p.storage[k][s];
                disc *= gamma;
            }
            best = best.max(v);
        }
        total += best;
    }
    let mut disc = 1.0;
    for (l, k) in lambda.iter().zip(limits) {
        total += disc * l * k;
        disc *= gamma;
    }
    total
}

/// Minimum of [`storage_dual`] over a coarse lattice on `[0, cap]^H`, then over
/// a fine lattice around the coarse minimizer.
pub fn grid_min_dual(plans: &[GridPlans], limits: &[f64], gamma: f64, cap: f64, coarse: usize, fine: usize) -> (f64, Vec<f64>) {
    let h = limits.len();
    let search = |centre: &[f64], half: f64, n: usize| -> (f64, Vec<f64>) {
        let mut best = (f64::INFINITY, vec![0.0; h]);
        let pts = n + 1;
        let mut lam = vec![0.0; h];
        for code in 0..pts.pow(h as u32) {
            let mut c = code;
            for (s, l) in lam.iter_mut().enumerate() {
                let lo = (centre[s] - half).max(0.0);
                let hi = (centre[s] + half).min(cap);
                *l = lo + (hi - lo) * (c % pts) as f64 / n as f64;
                c /= pts;
            }
            let v = storage_dual(plans, &lam, limits, gamma);
            if v < best.0 {
                best = (v, lam.clone());
            }
        }
        best
    };
    let coarse_best = search(&vec![cap / 2.0; h], cap / 2.0, coarse);
    let step = cap / coarse as f64;
    let fine_best = search(&coarse_best.1, step, fine);
    if fine_best.0 < coarse_best.0 {
        fine_best
    } else {
        coarse_best
    }
}
