use std::sync::Arc;

use proptest::prelude::*;

use cams_core::ddm::{accuracy_h0, accuracy_h1, initial_evidence, DdmParams, Decision};
use cams_core::decision_support::{
    knapsack_sigmoid, solve_horizon, ExpectedTask, Grids, HorizonProblem, QueueGrid, SigmoidItem,
    TaskSnapshot,
};
use cams_core::detection::CusumBank;
use cams_core::human_factors::{retained_belief, retention, RetentionParams};
use cams_core::operator::{bayes_update, reset_floor, BELIEF_CAP};
use cams_core::routing::{metropolis_hastings, RoutingPolicy};
use cams_core::trace::format_sig;

fn graph_and_target() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|m| {
        (
            proptest::collection::vec(any::<bool>(), m * m),
            proptest::collection::vec(0usize..1000, m),
            proptest::collection::vec(0.01f64..1.0, m),
        )
            .prop_map(move |(bits, parents, raw)| {
                let mut adj = vec![vec![false; m]; m];
                for i in 0..m {
                    for j in 0..m {
                        if bits[i * m + j] {
                            adj[i][j] = true;
                            adj[j][i] = true;
                        }
                    }
                }
                // spanning tree keeps the graph connected
                for i in 1..m {
                    let p = parents[i] % i;
                    adj[i][p] = true;
                    adj[p][i] = true;
                }
                let s: f64 = raw.iter().sum();
                (adj, raw.iter().map(|x| x / s).collect())
            })
    })
}

proptest! {
    #[test]
    fn format_sig_keeps_nine_digits(x in prop_oneof![-1e12f64..1e12, -1e-3f64..1e-3]) {
        let back: f64 = format_sig(x).parse().unwrap();
        prop_assert!((back - x).abs() <= 5e-9 * x.abs(), "{x} -> {}", format_sig(x));
    }

    #[test]
    fn metropolis_hastings_is_reversible((adj, q) in graph_and_target()) {
        let a = metropolis_hastings(&adj, &q).unwrap();
        let m = q.len();
        for i in 0..m {
            prop_assert!((a[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..m {
                prop_assert!(a[i][j] >= 0.0);
                prop_assert!((q[i] * a[i][j] - q[j] * a[j][i]).abs() < 1e-12);
                if i != j && !adj[i][j] {
                    prop_assert_eq!(a[i][j], 0.0);
                }
            }
        }
    }

    #[test]
    fn cusum_statistics_stay_nonnegative(
        steps in proptest::collection::vec((0usize..3, 0.0f64..5.0, any::<bool>(), 0.01f64..0.99, 0.01f64..0.99), 1..200)
    ) {
        let mut bank = CusumBank::new(3, 5.0).unwrap();
        for (k, t, d, f1, f0) in steps {
            let d = if d { Decision::Anomalous } else { Decision::Nominal };
            let before = bank.statistics().to_vec();
            let fired = bank.observe(k, t, d, f1, f0).unwrap();
            prop_assert!(bank.statistics().iter().all(|&s| s >= 0.0));
            if t == 0.0 {
                prop_assert!(fired.is_none());
                prop_assert_eq!(bank.statistics(), before.as_slice());
            }
            if fired == Some(true) {
                prop_assert_eq!(bank.statistics()[k], 0.0);
            }
            let q = cams_core::routing::likelihood_routing(&bank);
            prop_assert!((q.probabilities().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn beliefs_stay_in_range(prior in 0.5f64..BELIEF_CAP, p1 in 1e-6f64..1.0, p0 in 1e-6f64..1.0) {
        let post = reset_floor(bayes_update(prior, p1, p0).unwrap()).min(BELIEF_CAP);
        prop_assert!((0.5..=BELIEF_CAP).contains(&post));
    }

    #[test]
    fn retention_decays_toward_indifference(pi in 0.5f64..0.999, a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let p = RetentionParams::default();
        let (early, late) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(retention(late, &p) <= retention(early, &p));
        let r_early = retained_belief(pi, early, &p);
        let r_late = retained_belief(pi, late, &p);
        prop_assert!(r_late <= r_early + 1e-15);
        prop_assert!(r_late >= 0.5 - 1e-15);
    }

    #[test]
    fn accuracies_are_probabilities(t in 1e-6f64..1e4, prior in 0.01f64..0.99) {
        let p = DdmParams::new(0.3, 1.0).unwrap();
        let x0 = initial_evidence(prior, &p).unwrap();
        for f in [accuracy_h0(t, x0, &p).unwrap(), accuracy_h1(t, x0, &p).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }

    #[test]
    fn knapsack_respects_budget(
        items in proptest::collection::vec((0.1f64..3.0, 0.5f64..30.0, 0.1f64..3.0), 1..6),
        budget in 0.0f64..80.0,
    ) {
        let items: Vec<SigmoidItem> = items
            .into_iter()
            .map(|(r, m, w)| SigmoidItem::logistic(r, m, w).unwrap())
            .collect();
        let sol = knapsack_sigmoid(&items, budget).unwrap();
        prop_assert!(sol.allocations.iter().all(|&t| t >= 0.0));
        prop_assert!(sol.allocations.iter().sum::<f64>() <= budget + 1e-9);
        let v: f64 = items.iter().zip(&sol.allocations).map(|(it, &t)| it.weight * it.value(t)).sum();
        prop_assert!((v - sol.value).abs() <= 1e-9 * v.abs().max(1.0));
    }

    #[test]
    fn queue_grid_picks_nearest(step in 0.05f64..2.0, cap in 1.0f64..60.0, n in 0.0f64..80.0) {
        let g = QueueGrid::new(step, cap);
        let i = g.nearest(n);
        let d = (g.points()[i] - n).abs();
        prop_assert!(g.points().iter().all(|&p| (p - n).abs() >= d - 1e-12));
    }

    #[test]
    fn horizon_duration_within_deadline(
        horizon in 1usize..4,
        queued in 1usize..4,
        priors in proptest::collection::vec(0.5f64..0.95, 3),
        deadline in 5.0f64..40.0,
        rate in 0.0f64..0.1,
    ) {
        let ddm = DdmParams::new(0.3, 1.0).unwrap();
        let curve = |prior: f64| {
            let x0 = initial_evidence(prior, &ddm).unwrap();
            let p = ddm;
            Arc::new(move |t: f64| {
                if t <= 0.0 { 0.5 } else {
                    prior * accuracy_h0(t, x0, &p).unwrap() + (1.0 - prior) * accuracy_h1(t, x0, &p).unwrap()
                }
            }) as cams_core::decision_support::Curve
        };
        let grids = Grids { duration_step: 1.0, queue_step: 0.5, queue_cap: 10.0 };
        let queue: Vec<TaskSnapshot> = priors[..queued]
            .iter()
            .map(|&p| TaskSnapshot::new(0, curve(p), 1.0, deadline, grids.duration_step).unwrap())
            .collect();
        let problem = HorizonProblem {
            horizon,
            expected: ExpectedTask {
                performance: curve(0.5),
                weight: 1.0,
                latency_rate: queue[0].latency_rate,
                deadline,
            },
            queue,
            arrival_rate: rate,
            grids,
        };
        let sol = solve_horizon(&problem).unwrap();
        prop_assert!(sol.duration >= 0.0 && sol.duration <= deadline);
        // the best average reward never beats a perfect, instantaneous answer
        prop_assert!(sol.value <= 1.0);
    }
}

#[test]
fn routing_policy_rejects_non_distributions() {
    assert!(RoutingPolicy::new(vec![0.5, 0.6]).is_err());
    assert!(RoutingPolicy::new(vec![-0.1, 1.1]).is_err());
    assert!(RoutingPolicy::new(vec![0.25; 4]).is_ok());
}
