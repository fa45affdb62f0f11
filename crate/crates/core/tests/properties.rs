use dispatchd_core::dispatch::{expected_cost, newsvendor_quantile, piecewise_cost, Action, CostRates, DemandDistribution, Dispatch};
use dispatchd_core::metrics::competitive_ratio;
use proptest::prelude::*;

fn rates() -> CostRates<f64> {
    CostRates::per_mwh(50.0, 102.0, 55.0).unwrap()
}

fn distribution() -> impl Strategy<Value = DemandDistribution<f64>> {
    prop::collection::vec((0.0f64..40.0, 0.05f64..1.0), 1..32).prop_map(|v| {
        let total: f64 = v.iter().map(|x| x.1).sum();
        DemandDistribution::new(v.into_iter().map(|(d, w)| (d, w / total)).collect()).unwrap()
    })
}

proptest! {
    #[test]
    fn every_slot_policy_serves_demand_and_pays_at_least_hindsight(g in 0.0f64..30.0, d in 0.0f64..30.0) {
        let r = rates();
        let best = Dispatch::hindsight(g, d);
        prop_assert!((best.served_kwh() - d).abs() < 1e-9);
        prop_assert!((best.cost(&r) - piecewise_cost(d.min(g), d, &r)).abs() < 1e-12);
        for other in [
            Dispatch::for_action(Action::Store, g, d),
            Dispatch::for_action(Action::NonRenewable, g, d),
            Dispatch::committed(g, d),
            Dispatch::grid_only(d),
        ] {
            prop_assert!(other.cost(&r) >= best.cost(&r));
            prop_assert!(competitive_ratio(other.cost(&r), best.cost(&r)) >= 1.0);
            prop_assert!(other.non_kwh >= 0.0 && other.sto_kwh >= 0.0);
        }
    }

    #[test]
    fn ground_truth_action_is_the_cheaper_one(g in 0.0f64..30.0, d in 0.0f64..30.0) {
        let r = rates();
        let truth = Action::ground_truth(g, d);
        let other = if truth == Action::Store { Action::NonRenewable } else { Action::Store };
        prop_assert!(Dispatch::for_action(truth, g, d).cost(&r) <= Dispatch::for_action(other, g, d).cost(&r));
    }

    #[test]
    fn quantile_beats_any_other_commitment(dist in distribution(), cap in 1.0f64..50.0, u in 0.0f64..1.0) {
        let r = rates();
        let q = newsvendor_quantile(&dist, &r, cap);
        prop_assert!((0.0..=cap).contains(&q));
        let x = u * cap;
        prop_assert!(expected_cost(q, &dist, &r) <= expected_cost(x, &dist, &r) + 1e-9);
    }
}
