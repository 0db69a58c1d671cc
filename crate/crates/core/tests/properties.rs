//! Property-based invariants of the simulator, policies, coordinators and metrics.

mod common;

use capcoord::backtest::violation_metrics;
use capcoord::capacity::{project, reconstruct};
use capcoord::coordinators::{BoundCoordinator, NeuralCoordinator, NeuralCoordinatorConfig, ZeroPrice};
use capcoord::idp::{
    initial_inventory, rollout, CapacityPath, ExoSeries, InitMode, Resource, RolloutOptions,
};
use capcoord::policies::{
    base_stock_target, BaseStockConfig, BaseStockInputs, BaseStockPolicy, NeuralPolicy,
    NeuralPolicyConfig, ScheduledPolicy,
};
use capcoord::policies::Bound;
use capcoord::seed;
use capcoord::training::DualState;
use proptest::prelude::*;
use rand::Rng;

fn population(seed_value: u64, n: usize, horizon: usize) -> Vec<ExoSeries> {
    let mut rng = seed::rng(seed_value);
    (0..n).map(|_| common::random_product(&mut rng, horizon)).collect()
}

fn mode(onhand: bool) -> InitMode {
    if onhand {
        InitMode::OnhandWithInflight
    } else {
        InitMode::Zero
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn units_are_conserved(s in any::<u64>(), n in 1usize..5, horizon in 1usize..16, onhand in any::<bool>()) {
        let products = population(s, n, horizon);
        let init: Vec<_> = products.iter().map(|p| initial_inventory(p, mode(onhand))).collect();
        let mut rng = seed::rng(s ^ 1);
        let actions: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..horizon).map(|_| rng.gen_range(0.0..25.0)).collect())
            .collect();
        let policy = ScheduledPolicy { actions: actions.clone() };
        let out = rollout(&products, &init, &policy, &mut ZeroPrice { forecast_len: 0 },
            &CapacityPath::unconstrained(horizon), RolloutOptions::default()).unwrap();
        let ledger = out.ledger;
        for i in 0..n {
            let start = init[i].onhand + init[i].pipeline.iter().map(|p| p.1).sum::<f64>();
            let ordered: f64 = actions[i].iter().sum();
            let rows = &ledger.rows[i];
            let fulfilled: f64 = rows.iter().map(|r| r.fulfilled).sum();
            let end = rows.last().unwrap().onhand_end;
            let lhs = start + ordered;
            let rhs = end + fulfilled + ledger.undelivered[i];
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), "{lhs} vs {rhs}");
            for r in rows {
                prop_assert!(r.onhand_end >= 0.0);
                prop_assert!(r.fulfilled <= r.demand + 1e-12);
                prop_assert!(r.fulfilled <= r.onhand_start + r.arrivals + 1e-12);
            }
        }
    }

    #[test]
    fn aggregates_match_rows(s in any::<u64>(), n in 1usize..6, horizon in 1usize..12) {
        let products = population(s, n, horizon);
        let init: Vec<_> = products.iter().map(|p| initial_inventory(p, InitMode::OnhandWithInflight)).collect();
        let out = rollout(&products, &init, &BaseStockPolicy::default(), &mut ZeroPrice { forecast_len: 0 },
            &CapacityPath::unconstrained(horizon), RolloutOptions::default()).unwrap();
        let (storage, inbound) = out.ledger.recompute_aggregates();
        for t in 0..horizon {
            prop_assert!((storage[t] - out.ledger.agg_storage[t]).abs() <= 1e-9 * storage[t].max(1.0));
            prop_assert!((inbound[t] - out.ledger.agg_inbound[t]).abs() <= 1e-9 * inbound[t].max(1.0));
            let direct: f64 = (0..n).map(|i| products[i].storage_weight * out.ledger.rows[i][t].onhand_end).sum();
            prop_assert!((direct - storage[t]).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn learned_policy_and_coordinator_stay_nonnegative(s in any::<u64>(), n in 1usize..4, horizon in 2usize..10) {
        let products = population(s, n, horizon);
        let init: Vec<_> = products.iter().map(|p| initial_inventory(p, InitMode::OnhandWithInflight)).collect();
        let net = NeuralPolicy::new(NeuralPolicyConfig { hidden: vec![6], ..Default::default() }).unwrap();
        let theta = net.mlp.init_params(&mut seed::rng(s ^ 2), 2.0).constants();
        let coord = NeuralCoordinator::new(NeuralCoordinatorConfig { hidden: vec![6], ..Default::default() }).unwrap();
        let omega = coord.mlp.init_params(&mut seed::rng(s ^ 3), 2.0).constants();
        let k = 10.0 * n as f64;
        let path = CapacityPath::new(vec![k; horizon], vec![f64::INFINITY; horizon]).unwrap();
        let out = rollout(&products, &init, &Bound { policy: &net, params: &theta },
            &mut BoundCoordinator { coordinator: &coord, params: &omega }, &path, RolloutOptions::default()).unwrap();
        for rows in &out.ledger.rows {
            prop_assert!(rows.iter().all(|r| r.action >= 0.0));
        }
        for week in &out.ledger.prices {
            for p in week {
                prop_assert!(p[0] >= 0.0);
                // Unlimited inbound always carries a zero price.
                prop_assert!(p[1] == 0.0);
            }
        }
    }

    #[test]
    fn base_stock_target_falls_with_storage_price(
        window in prop::collection::vec(0.0f64..30.0, 1..10),
        lead in 0u32..5,
        price in 1.0f64..20.0,
        cost in 0.0f64..10.0,
        w in 0.1f64..3.0,
        lo in 0.0f64..5.0,
        extra in 0.0f64..5.0,
    ) {
        let cfg = BaseStockConfig::default();
        let target = |lambda: f64| {
            let prices = [[lambda, 0.0]; 3];
            base_stock_target(&BaseStockInputs {
                demand_window: &window, lead_time: lead, price, cost,
                storage_weight: w, inbound_weight: 1.0, prices: &prices, position: 0.0,
            }, &cfg)
        };
        prop_assert!(target(lo + extra) <= target(lo) + 1e-12);
        prop_assert!(target(lo) >= 0.0);
    }

    #[test]
    fn decisions_ignore_future_demand(s in any::<u64>(), n in 1usize..4, horizon in 3usize..10, cut in 0usize..3) {
        let products = population(s, n, horizon);
        let cut = cut.min(horizon - 1);
        let mut perturbed = products.clone();
        let mut rng = seed::rng(s ^ 4);
        for p in &mut perturbed {
            for d in &mut p.demand[cut..] {
                *d = rng.gen_range(0.0..40.0);
            }
        }
        let coord = NeuralCoordinator::new(NeuralCoordinatorConfig { hidden: vec![4], ..Default::default() }).unwrap();
        let omega = coord.mlp.init_params(&mut seed::rng(s ^ 5), 1.0).constants();
        let path = CapacityPath::new(vec![5.0 * n as f64; horizon], vec![f64::INFINITY; horizon]).unwrap();
        let run = |pop: &[ExoSeries]| {
            let init: Vec<_> = pop.iter().map(|p| initial_inventory(p, InitMode::Zero)).collect();
            rollout(pop, &init, &BaseStockPolicy::default(),
                &mut BoundCoordinator { coordinator: &coord, params: &omega }, &path, RolloutOptions::default())
                .unwrap()
                .ledger
        };
        let (a, b) = (run(&products), run(&perturbed));
        for t in 0..=cut {
            prop_assert_eq!(&a.prices[t], &b.prices[t]);
            for i in 0..n {
                prop_assert_eq!(a.rows[i][t].action, b.rows[i][t].action);
            }
        }
    }

    #[test]
    fn dual_update_is_projected(
        start in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..8),
        usage_scale in 0.0f64..3.0,
        step in 0.0f64..4.0,
        s in any::<u64>(),
    ) {
        let horizon = start.len();
        let mut rng = seed::rng(s);
        let storage: Vec<f64> = (0..horizon).map(|_| rng.gen_range(0.0..10.0)).collect();
        let inbound: Vec<f64> = (0..horizon)
            .map(|_| if rng.gen_bool(0.3) { f64::INFINITY } else { rng.gen_range(0.0..10.0) })
            .collect();
        let path = CapacityPath::new(storage, inbound).unwrap();
        let mut duals = DualState::zeros(1, horizon);
        for (t, (a, b)) in start.iter().enumerate() {
            duals.costs[0][t] = [*a, *b];
        }
        let us: Vec<f64> = (0..horizon).map(|_| usage_scale * rng.gen_range(0.0..10.0)).collect();
        let ui: Vec<f64> = (0..horizon).map(|_| usage_scale * rng.gen_range(0.0..10.0)).collect();
        duals.update(0, &path, [&us, &ui], step);
        for (t, lam) in duals.costs[0].iter().enumerate() {
            prop_assert!(lam[0] >= 0.0 && lam[1] >= 0.0);
            if path.inbound[t].is_infinite() {
                prop_assert_eq!(lam[1], 0.0);
            }
            // Costs only rise where usage exceeds the limit.
            if us[t] > path.storage[t] {
                prop_assert!(lam[0] >= start[t].0);
            } else {
                prop_assert!(lam[0] <= start[t].0);
            }
        }
    }

    #[test]
    fn violation_metrics_are_bounded(
        weeks in prop::collection::vec((0.0f64..20.0, 0.0f64..10.0, 0.0f64..20.0), 1..30),
    ) {
        let usage: Vec<f64> = weeks.iter().map(|w| w.0).collect();
        let limits: Vec<f64> = weeks.iter().map(|w| if w.1 < 0.5 { 0.0 } else { w.1 }).collect();
        let reference: Vec<f64> = weeks.iter().map(|w| w.2).collect();
        let m = violation_metrics(&usage, &limits, &[&reference]).unwrap();
        prop_assert!(m.m1 >= 0.0);
        prop_assert!((0.0..=100.0).contains(&m.m3));
        prop_assert!(m.triggered_weeks <= m.evaluated_weeks);
        prop_assert_eq!(m.evaluated_weeks + m.zero_limit_weeks, weeks.len());
        if let Some(m4) = m.m4 {
            prop_assert!((0.0..=100.0).contains(&m4));
            // Severe triggered weeks are a subset of all severe weeks.
            let severe_triggered = m4 / 100.0 * m.triggered_weeks as f64;
            let severe = m.m3 / 100.0 * m.evaluated_weeks as f64;
            prop_assert!(severe_triggered <= severe + 1e-9);
        } else {
            prop_assert_eq!(m.triggered_weeks, 0);
        }
    }

    #[test]
    fn haar_projection_round_trips(order in 0u32..5, s in any::<u64>()) {
        let mut rng = seed::rng(s);
        let values: Vec<f64> = (0..1usize << (order + 1)).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (c, coeffs) = project(order, &values).unwrap();
        let back = reconstruct(order, c, &coeffs);
        for (a, b) in values.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn storage_usage_accessor_matches_aggregates() {
    let products = population(9, 3, 6);
    let init: Vec<_> = products.iter().map(|p| initial_inventory(p, InitMode::Zero)).collect();
    let out = rollout(&products, &init, &BaseStockPolicy::default(), &mut ZeroPrice { forecast_len: 0 },
        &CapacityPath::unconstrained(6), RolloutOptions::default()).unwrap();
    assert_eq!(out.ledger.usage(Resource::Storage), out.ledger.agg_storage);
}
