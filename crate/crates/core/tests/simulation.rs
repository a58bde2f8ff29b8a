use cams_core::scenario::{bundled, RoutingMode};
use cams_core::sim::{run_with_seed, sweep};
use cams_core::trace::{read_trace, write_trace, EventKind};
use cams_core::{Error, Scenario};

fn case(text: &str) -> Scenario {
    Scenario::from_toml(text).unwrap()
}

#[test]
fn bundled_case_one_parameters() {
    let s = case(bundled::CASE1);
    assert_eq!(
        s.graph.travel,
        vec![
            vec![0.0, 22.1422, 34.4786, 8.9541],
            vec![22.1422, 0.0, 19.3171, 14.6245],
            vec![34.4786, 19.3171, 0.0, 25.5756],
            vec![8.9541, 14.6245, 25.5756, 0.0],
        ]
    );
    assert_eq!(s.graph.collection, vec![10.0; 4]);
    assert_eq!(s.regions.deadlines, vec![40.0; 4]);
    assert_eq!((s.operator.drift, s.operator.diffusion), (0.3, 1.0));
    assert_eq!(s.algorithm.horizon, 5);
    assert_eq!(s.algorithm.cusum_threshold, 5.0);
    let onsets: Vec<f64> = s.anomalies.iter().map(|a| a.onset).collect();
    assert_eq!(onsets, vec![20.0, 80.0, 140.0, 200.0]);
    assert!(!s.run.exogenous_factors);
}

#[test]
fn bundled_case_two_turns_on_human_factors() {
    let s = case(bundled::CASE2);
    assert!(s.run.exogenous_factors);
    assert_eq!(s.regions.deadlines, vec![60.0; 4]);
    let u = &s.operator.utilization;
    assert_eq!((u.sensitivity, u.optimal, u.threshold), (100.0, 0.7, 0.85));
}

#[test]
fn scenario_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for text in [bundled::CASE1, bundled::CASE2] {
        let s = case(text);
        let path = dir.path().join("s.toml");
        s.write(&path).unwrap();
        assert_eq!(Scenario::load(&path).unwrap(), s);
    }
}

#[test]
fn load_reports_path_and_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = bundled::CASE1
        .replace("travel = [", "travel = [\n  [0.0, 1.0, 2.0, 3.0],")
        .replace("routing = \"independent\"", "routing = \"fmmc\"");
    std::fs::write(&path, text).unwrap();
    let Err(Error::Config(errs)) = Scenario::load(&path) else {
        panic!("expected config errors");
    };
    assert!(errs.len() >= 2, "{errs:?}");
    assert!(errs
        .iter()
        .all(|e| e.starts_with(&path.display().to_string())));
}

#[test]
fn trace_survives_csv_round_trip() {
    let out = run_with_seed(&case(bundled::CASE2), 11).unwrap();
    let mut buf = Vec::new();
    write_trace(&mut buf, &out.trace).unwrap();
    let back = read_trace(buf.as_slice()).unwrap();
    assert_eq!(back.records.len(), out.trace.records.len());
    let mut again = Vec::new();
    write_trace(&mut again, &back).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn simple_model_leaves_human_factor_columns_empty() {
    let out = run_with_seed(&case(bundled::CASE1), 2).unwrap();
    assert!(out.trace.records.iter().all(|r| r.utilization.is_none()
        && r.task_effectiveness.is_none()
        && r.motor_time.is_none()
        && r.event != EventKind::Rest));
    assert!(out.trace.records.iter().all(|r| r.beliefs == r.retained));
}

#[test]
fn events_are_time_ordered_and_decisions_follow_allocations() {
    let out = run_with_seed(&case(bundled::CASE2), 5).unwrap();
    let recs = &out.trace.records;
    assert!(recs.windows(2).all(|w| w[0].time <= w[1].time));
    for (i, r) in recs.iter().enumerate() {
        if r.event == EventKind::Decide {
            let alloc = recs[..i]
                .iter()
                .rev()
                .find(|x| x.event == EventKind::Allocate)
                .unwrap();
            assert_eq!(alloc.region, r.region);
            assert!(alloc.allocation.unwrap() > 0.0);
            assert!(
                (r.time - alloc.time - alloc.allocation.unwrap()).abs() < 1e-9 * r.time.max(1.0)
            );
        }
    }
}

#[test]
fn metropolis_hastings_routing_runs() {
    let mut s = case(bundled::CASE1);
    s.algorithm.routing = RoutingMode::MetropolisHastings;
    let out = run_with_seed(&s, 4).unwrap();
    assert!(out.summary.tasks_processed > 0);
    assert!(out
        .trace
        .records
        .iter()
        .all(|r| (r.routing.iter().sum::<f64>() - 1.0).abs() < 1e-12));
}

#[test]
fn sweep_is_ordered_and_matches_single_runs() {
    let s = case(bundled::CASE1);
    let rows = sweep(&s, 3..=6).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![3, 4, 5, 6]
    );
    assert_eq!(rows[2], run_with_seed(&s, 5).unwrap().summary);
}

#[test]
fn knapsack_allocation_mode_runs() {
    let mut s = case(bundled::CASE1);
    s.algorithm.allocation = cams_core::scenario::AllocationMode::Knapsack;
    let out = run_with_seed(&s, 1).unwrap();
    assert!(out.summary.tasks_processed > 0);
    assert!(out
        .trace
        .records
        .iter()
        .filter(|r| r.event == EventKind::Allocate)
        .all(|r| (0.0..=40.0).contains(&r.allocation.unwrap())));
}
