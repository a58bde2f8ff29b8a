//! End-to-end validation suite: each check pits the library against an
//! independent oracle (Monte Carlo, exhaustive enumeration, dense grids) or
//! a structural property, and reports pass/fail with numbers.
//!
//! Used by the `acceptance` test target and by `cams validate`.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ddm::{
    accuracy_h0, accuracy_h1, free_response_expected_time, DdmParams, Decision, Hypothesis,
};
use crate::decision_support::{
    action_grid, knapsack_sigmoid, latency_rate, queue_transition, reward_expected,
    reward_realized, solve_horizon, Curve, ExpectedTask, Grids, HorizonProblem, QueueGrid,
    SigmoidItem, TaskSnapshot,
};
use crate::detection::CusumBank;
use crate::human_factors::{self, utilization_after_task};
use crate::routing::metropolis_hastings;
use crate::scenario::{bundled, Scenario};
use crate::sim::{run_with_seed, RunOutput};
use crate::trace::{write_trace, EventKind, Trace};

/// One verified property inside a check.
#[derive(Debug, Clone)]
pub struct Finding {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Failure is expected and explained; it does not count as a regression.
    pub known_gap: bool,
}

impl Finding {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Finding {
            name: name.into(),
            passed,
            detail: detail.into(),
            known_gap: false,
        }
    }

    fn known_gap(mut self) -> Self {
        self.known_gap = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub id: usize,
    pub title: &'static str,
    pub findings: Vec<Finding>,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.findings.iter().all(|f| f.passed) && self.elapsed <= self.budget
    }

    /// Failures other than documented gaps, including a blown time budget.
    pub fn regressions(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .findings
            .iter()
            .filter(|f| !f.passed && !f.known_gap)
            .map(|f| format!("{} ({})", f.name, f.detail))
            .collect();
        if self.elapsed > self.budget {
            out.push(format!(
                "runtime {:.1?} over budget {:.0?}",
                self.elapsed, self.budget
            ));
        }
        out
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .findings
            .iter()
            .filter(|f| !f.passed)
            .map(|f| {
                let gap = if f.known_gap { ", known gap" } else { "" };
                format!("{} ({}{gap})", f.name, f.detail)
            })
            .collect();
        if self.elapsed > self.budget {
            out.push(format!(
                "runtime {:.1?} over budget {:.0?}",
                self.elapsed, self.budget
            ));
        }
        out
    }

    pub fn summary_line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let details: Vec<String> = self.findings.iter().map(|f| f.detail.clone()).collect();
        format!(
            "criterion {}: {status}: {} [{:.2?}] {}",
            self.id,
            self.title,
            self.elapsed,
            details.join("; ")
        )
    }
}

type CheckFn = fn() -> Vec<Finding>;

/// Every check, in order: (id, title, runtime budget, body).
pub fn checks() -> Vec<(usize, &'static str, Duration, CheckFn)> {
    vec![
        (
            1,
            "Metropolis-Hastings stationarity and detailed balance",
            Duration::from_secs(1),
            check_metropolis_hastings,
        ),
        (
            2,
            "drift-diffusion formulas and free-response Monte Carlo",
            Duration::from_secs(30),
            check_ddm,
        ),
        (
            3,
            "CUSUM operating characteristic",
            Duration::from_secs(10),
            check_cusum,
        ),
        (
            4,
            "sigmoid knapsack 2-factor guarantee",
            Duration::from_secs(30),
            check_knapsack,
        ),
        (
            5,
            "receding-horizon dynamic program",
            Duration::from_secs(60),
            check_horizon,
        ),
        (
            6,
            "case study without exogenous factors",
            Duration::from_secs(120),
            check_case1,
        ),
        (
            7,
            "case study with exogenous factors",
            Duration::from_secs(180),
            check_case2,
        ),
        (
            8,
            "determinism and scenario round trip",
            Duration::from_secs(5),
            check_determinism,
        ),
        (
            9,
            "belief, statistic and routing safety",
            Duration::from_secs(5),
            check_safety,
        ),
    ]
}

pub fn run_check(id: usize) -> Option<CheckReport> {
    checks()
        .into_iter()
        .find(|c| c.0 == id)
        .map(|(id, title, budget, f)| {
            let start = Instant::now();
            let findings = f();
            CheckReport {
                id,
                title,
                findings,
                elapsed: start.elapsed(),
                budget,
            }
        })
}

pub fn run_all() -> Vec<CheckReport> {
    checks().iter().filter_map(|c| run_check(c.0)).collect()
}

fn max_abs(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[allow(clippy::needless_range_loop)]
fn random_connected_graph(rng: &mut ChaCha8Rng, m: usize) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; m]; m];
    for i in 1..m {
        let j = rng.random_range(0..i);
        adj[i][j] = true;
        adj[j][i] = true;
    }
    for i in 0..m {
        for j in i..m {
            if rng.random::<f64>() < 0.3 {
                adj[i][j] = true;
                adj[j][i] = true;
            }
        }
    }
    adj
}

fn check_metropolis_hastings() -> Vec<Finding> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let (mut stationarity, mut balance, mut rows) = (0.0f64, 0.0f64, 0.0f64);
    let mut support_ok = true;
    for _ in 0..50 {
        let m = rng.random_range(1..=8);
        let adj = random_connected_graph(&mut rng, m);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let a = match metropolis_hastings(&adj, &q) {
            Ok(a) => a,
            Err(e) => return vec![Finding::new("construction", false, e.to_string())],
        };
        for j in 0..m {
            let qa: f64 = (0..m).map(|i| q[i] * a[i][j]).sum();
            stationarity = stationarity.max((qa - q[j]).abs());
        }
        for i in 0..m {
            rows = rows.max((a[i].iter().sum::<f64>() - 1.0).abs());
            for j in 0..m {
                balance = balance.max((q[i] * a[i][j] - q[j] * a[j][i]).abs());
                if i != j && !adj[i][j] && a[i][j] != 0.0 {
                    support_ok = false;
                }
                if a[i][j] < 0.0 {
                    support_ok = false;
                }
            }
        }
    }
    vec![
        Finding::new(
            "stationarity",
            stationarity < 1e-10,
            format!("max |qA-q| = {stationarity:.1e}"),
        ),
        Finding::new(
            "detailed balance",
            balance < 1e-12,
            format!("max balance residual = {balance:.1e}"),
        ),
        Finding::new(
            "row sums",
            rows < 1e-12,
            format!("max row-sum error = {rows:.1e}"),
        ),
        Finding::new(
            "support",
            support_ok,
            format!("edges respected = {support_ok}"),
        ),
    ]
}

/// Mean first exit time of `dx = μ dt + σ dW` from `(-η, η)` started at
/// `x0`, by Euler steps with a Brownian-bridge crossing correction.
pub fn first_passage_monte_carlo(
    mu: f64,
    sigma: f64,
    eta: f64,
    x0: f64,
    dt: f64,
    paths: usize,
    seed: u64,
) -> f64 {
    const CHUNK: usize = 1000;
    let chunks = paths.div_ceil(CHUNK);
    let total: f64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = CHUNK.min(paths - c * CHUNK);
            let sd = sigma * dt.sqrt();
            let var = sigma * sigma * dt;
            let mut acc = 0.0;
            for _ in 0..n {
                let (mut x, mut t) = (x0, 0.0);
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    let y = x + mu * dt + sd * z;
                    if y >= eta || y <= -eta {
                        let edge = if y >= eta { eta } else { -eta };
                        t += dt * (edge - x) / (y - x);
                        break;
                    }
                    let p_up = (-2.0 * (eta - x) * (eta - y) / var).exp();
                    let p_down = (-2.0 * (x + eta) * (y + eta) / var).exp();
                    if rng.random::<f64>() < p_up + p_down {
                        t += 0.5 * dt;
                        break;
                    }
                    x = y;
                    t += dt;
                }
                acc += t;
            }
            acc
        })
        .sum();
    total / paths as f64
}

fn check_ddm() -> Vec<Finding> {
    let p = DdmParams::new(0.3, 1.0).expect("valid parameters");
    let symmetry = max_abs((1..=200).map(|i| {
        let t = i as f64 * 0.5;
        accuracy_h0(t, 0.0, &p).unwrap() - accuracy_h1(t, 0.0, &p).unwrap()
    }));
    let late = accuracy_h0(1e6, 0.0, &p).unwrap();
    let early = accuracy_h0(1e-12, 0.0, &p).unwrap();
    let zero = Hypothesis::Anomalous.accuracy(0.0, 0.0, 0.3, 1.0, 0.0);
    let mut out = vec![
        Finding::new(
            "symmetry",
            symmetry <= 1e-12,
            format!("max |f0-f1| = {symmetry:.1e}"),
        ),
        Finding::new(
            "asymptotes",
            late > 1.0 - 1e-12 && (early - 0.5).abs() < 1e-6 && zero == 0.5,
            format!("f(1e6) = {late}, f(1e-12) = {early:.7}, f(0) = {zero}"),
        ),
    ];
    let fr = p.with_free_response_threshold(3.0);
    for (x0, seed) in [(0.0, 11), (1.0, 12)] {
        let exact = free_response_expected_time(x0, &fr).unwrap();
        let mc = first_passage_monte_carlo(0.3, 1.0, 3.0, x0, 0.01, 100_000, seed);
        let rel = (mc - exact).abs() / exact;
        out.push(Finding::new(
            format!("free response x0={x0}"),
            rel < 0.02,
            format!(
                "x0={x0}: formula {exact:.4} vs Monte Carlo {mc:.4} ({:.2}%)",
                100.0 * rel
            ),
        ));
    }
    out
}

fn check_cusum() -> Vec<Finding> {
    const REPS: u64 = 1000;
    let (f1, f0) = (0.8, 0.8);
    let runs: Vec<(f64, f64, bool, bool)> = (0..REPS)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xC05u64);
            rng.set_stream(r);
            let mut nonneg = true;
            let mut zero_ignored = true;
            let mut run_length = |p_one: f64, rng: &mut ChaCha8Rng| -> f64 {
                let mut bank = CusumBank::new(2, 5.0).unwrap();
                let mut steps = 0u64;
                loop {
                    steps += 1;
                    let d = if rng.random::<f64>() < p_one {
                        Decision::Anomalous
                    } else {
                        Decision::Nominal
                    };
                    if rng.random::<f64>() < 0.1 {
                        let before = bank.statistics().to_vec();
                        let r = bank.observe(0, 0.0, d, f1, f0).unwrap();
                        zero_ignored &= r.is_none() && bank.statistics() == before.as_slice();
                    }
                    let fired = bank.observe(0, 1.0, d, f1, f0).unwrap() == Some(true);
                    nonneg &= bank.statistics().iter().all(|&s| s >= 0.0);
                    if fired || steps > 1_000_000 {
                        return steps as f64;
                    }
                }
            };
            let false_alarm = run_length(1.0 - f0, &mut rng);
            let delay = run_length(f1, &mut rng);
            (false_alarm, delay, nonneg, zero_ignored)
        })
        .collect();
    let n = runs.len() as f64;
    let arl = runs.iter().map(|r| r.0).sum::<f64>() / n;
    let delay = runs.iter().map(|r| r.1).sum::<f64>() / n;
    let nonneg = runs.iter().all(|r| r.2);
    let zero_ignored = runs.iter().all(|r| r.3);
    vec![
        Finding::new(
            "delay vs false-alarm spacing",
            delay <= 0.1 * arl,
            format!("mean delay {delay:.2} vs mean time between false alarms {arl:.1}"),
        ),
        Finding::new(
            "nonnegative",
            nonneg,
            format!("statistics nonnegative = {nonneg}"),
        ),
        Finding::new(
            "zero allocations",
            zero_ignored,
            format!("zero-allocation tasks ignored = {zero_ignored}"),
        ),
    ]
}

/// Best `Σ w_k f_k(t_k)` over allocations on the grid `{0, h, 2h, …}` with
/// `Σ t_k ≤ budget`, `h = budget / steps`.
pub fn knapsack_grid_optimum(items: &[SigmoidItem], budget: f64, steps: usize) -> f64 {
    let h = budget / steps as f64;
    let mut best = vec![0.0; steps + 1];
    for it in items {
        let vals: Vec<f64> = (0..=steps)
            .map(|k| it.weight * it.value(k as f64 * h))
            .collect();
        let mut next = vec![f64::NEG_INFINITY; steps + 1];
        for used in 0..=steps {
            for (k, v) in vals.iter().enumerate().take(steps - used + 1) {
                let cand = best[used] + v;
                if cand > next[used + k] {
                    next[used + k] = cand;
                }
            }
        }
        let mut run = f64::NEG_INFINITY;
        for b in next.iter_mut() {
            run = run.max(*b);
            *b = run;
        }
        best = next;
    }
    best[steps]
}

fn random_logistic_items(rng: &mut ChaCha8Rng) -> (Vec<SigmoidItem>, f64) {
    let k = rng.random_range(1..=4);
    let items = (0..k)
        .map(|_| {
            SigmoidItem::logistic(
                rng.random_range(0.2..2.0),
                rng.random_range(1.0..20.0),
                rng.random_range(0.5..2.0),
            )
            .unwrap()
        })
        .collect();
    (items, rng.random_range(1.0..60.0))
}

fn check_knapsack() -> Vec<Finding> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4b4e_4150);
    let mut worst_ratio = f64::INFINITY;
    let mut worst_overshoot = f64::NEG_INFINITY;
    for _ in 0..100 {
        let (items, budget) = random_logistic_items(&mut rng);
        let sol = knapsack_sigmoid(&items, budget).unwrap();
        let opt = knapsack_grid_optimum(&items, budget, 200);
        worst_ratio = worst_ratio.min(sol.value / opt);
        worst_overshoot = worst_overshoot.max(sol.allocations.iter().sum::<f64>() - budget);
    }
    vec![
        Finding::new(
            "2-factor",
            worst_ratio >= 0.5,
            format!("worst achieved/grid-optimum = {worst_ratio:.4}"),
        ),
        Finding::new(
            "budget",
            worst_overshoot <= 1e-9,
            format!("max budget overshoot = {worst_overshoot:.1e}"),
        ),
    ]
}

fn ddm_curve(mu: f64, sigma: f64, prior: f64) -> Curve {
    let p = DdmParams::new(mu, sigma).unwrap();
    let x0 = crate::ddm::initial_evidence(prior, &p).unwrap();
    let (mu, sigma, nu) = (p.drift_magnitude, p.diffusion, p.interrogation_threshold);
    std::sync::Arc::new(move |t: f64| {
        prior * Hypothesis::Anomalous.accuracy(t, x0, mu, sigma, nu)
            + (1.0 - prior) * Hypothesis::Nominal.accuracy(t, x0, mu, sigma, nu)
    })
}

fn single_task_problem(rng: &mut ChaCha8Rng) -> HorizonProblem {
    let deadline = rng.random_range(20.0..60.0);
    let perf = ddm_curve(rng.random_range(0.1..0.5), rng.random_range(0.5..2.0), 0.5);
    let task = TaskSnapshot {
        region: 0,
        performance: perf.clone(),
        weight: rng.random_range(0.5..2.0),
        deadline,
        latency_rate: rng.random_range(0.0..0.02),
    };
    HorizonProblem {
        horizon: 1,
        queue: vec![task],
        arrival_rate: rng.random_range(0.01..0.1),
        expected: ExpectedTask {
            performance: perf,
            weight: 1.0,
            latency_rate: rng.random_range(0.0..0.02),
            deadline,
        },
        grids: Grids::default(),
    }
}

/// Case-study-sized problem: two queued tasks and one predicted task.
pub fn case_study_problem(grids: Grids, penalty_scale: f64) -> HorizonProblem {
    let deadline = 40.0;
    let make = |prior: f64| {
        let perf = ddm_curve(0.3, 1.0, prior);
        let c = latency_rate(perf.as_ref(), 1.0, deadline, grids.duration_step) * penalty_scale;
        TaskSnapshot {
            region: 0,
            performance: perf,
            weight: 1.0,
            deadline,
            latency_rate: c,
        }
    };
    let a = make(0.5);
    let b = make(0.7);
    let rate = 0.5 * (a.latency_rate + b.latency_rate);
    let perf_a = a.performance.clone();
    let perf_b = b.performance.clone();
    HorizonProblem {
        horizon: 3,
        queue: vec![a, b],
        arrival_rate: 1.0 / 25.6365,
        expected: ExpectedTask {
            performance: std::sync::Arc::new(move |t| 0.5 * perf_a(t) + 0.5 * perf_b(t)),
            weight: 1.0,
            latency_rate: rate,
            deadline,
        },
        grids,
    }
}

/// Best average reward by enumerating every action sequence, with the same
/// quantized queue dynamics as the solver. Returns (value, first action).
pub fn enumerate_horizon(problem: &HorizonProblem) -> (f64, f64) {
    let grid = QueueGrid::new(problem.grids.queue_step, problem.grids.queue_cap);
    let n = problem.queue.len();
    let stages = problem.horizon;
    let deadline = |j: usize| {
        if j <= n {
            problem.queue[j - 1].deadline
        } else {
            problem.expected.deadline
        }
    };
    let reward = |j: usize, t: f64, q: f64| {
        if j <= n {
            reward_realized(problem, j, t, q).unwrap()
        } else {
            reward_expected(problem, j, t, q).unwrap()
        }
    };
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut seq = Vec::new();
    enumerate(
        1,
        n as f64,
        stages,
        &mut seq,
        &|j| action_grid(deadline(j), problem.grids.duration_step),
        &reward,
        &grid,
        problem.arrival_rate,
        &mut best,
    );
    (best.0 / stages as f64, best.1)
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    j: usize,
    q: f64,
    stages: usize,
    seq: &mut Vec<(f64, f64)>,
    actions: &dyn Fn(usize) -> Vec<f64>,
    reward: &dyn Fn(usize, f64, f64) -> f64,
    grid: &QueueGrid,
    lambda: f64,
    best: &mut (f64, f64),
) {
    if j > stages {
        // sum right to left, as backward induction does
        let total = seq
            .iter()
            .rev()
            .fold(None, |acc: Option<f64>, &(r, _)| match acc {
                None => Some(r),
                Some(s) => Some(r + s),
            });
        let total = total.unwrap_or(0.0);
        if total > best.0 {
            *best = (total, seq[0].1);
        }
        return;
    }
    for t in actions(j) {
        seq.push((reward(j, t, q), t));
        let next = grid.points()[grid.nearest(queue_transition(q, lambda, t))];
        enumerate(
            j + 1,
            next,
            stages,
            seq,
            actions,
            reward,
            grid,
            lambda,
            best,
        );
        seq.pop();
    }
}

fn check_horizon() -> Vec<Finding> {
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(0xD9_0001);
    let mut worst_gap = 0.0f64;
    for _ in 0..50 {
        let p = single_task_problem(&mut rng);
        let dp = solve_horizon(&p).unwrap().duration;
        let fine = p.grids.duration_step / 10.0;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in action_grid(p.queue[0].deadline, fine) {
            let r = reward_realized(&p, 1, t, 1.0).unwrap();
            if r > best.0 {
                best = (r, t);
            }
        }
        worst_gap = worst_gap.max((dp - best.1).abs());
    }
    out.push(Finding::new(
        "N=1 vs dense grid",
        worst_gap <= Grids::default().duration_step + 1e-12,
        format!("N=1 max |t_dp - t_dense| = {worst_gap:.3}"),
    ));

    let coarse = Grids {
        duration_step: 2.0,
        queue_step: 0.5,
        queue_cap: 10.0,
    };
    let p = case_study_problem(coarse, 1.0);
    let sol = solve_horizon(&p).unwrap();
    let (value, first) = enumerate_horizon(&p);
    out.push(Finding::new(
        "N=3 vs enumeration",
        sol.value == value && sol.duration == first,
        format!(
            "N=3 DP value {:.12} / t1 {} vs enumeration {:.12} / t1 {}",
            sol.value, sol.duration, value, first
        ),
    ));

    let mut monotone = true;
    let mut last = f64::INFINITY;
    for scale in [0.0, 1.0, 2.0, 4.0, 8.0] {
        let v = solve_horizon(&case_study_problem(coarse, scale))
            .unwrap()
            .value;
        monotone &= v <= last + 1e-12;
        last = v;
    }
    out.push(Finding::new(
        "penalty monotone",
        monotone,
        format!("value nonincreasing in penalty = {monotone}"),
    ));

    let mut values = Vec::new();
    for k in 0..5 {
        let s = 2f64.powi(-k);
        let g = Grids {
            duration_step: 4.0 * s,
            queue_step: 0.8 * s,
            queue_cap: 20.0,
        };
        let mut p = case_study_problem(g, 1.0);
        p.horizon = 5;
        values.push(solve_horizon(&p).unwrap().value);
    }
    let changes: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let shrinking = changes.windows(2).all(|w| w[1] <= w[0]);
    out.push(Finding::new(
        "grid refinement",
        shrinking,
        format!(
            "value changes under halving: {}",
            changes
                .iter()
                .map(|c| format!("{c:.2e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));
    out
}

/// Case-study runs over seeds 1..=100, computed once per process.
fn case_runs(which: usize) -> &'static [(u64, RunOutput, u64)] {
    static CASE1: OnceLock<Vec<(u64, RunOutput, u64)>> = OnceLock::new();
    static CASE2: OnceLock<Vec<(u64, RunOutput, u64)>> = OnceLock::new();
    let (cell, text) = match which {
        1 => (&CASE1, bundled::CASE1),
        _ => (&CASE2, bundled::CASE2),
    };
    cell.get_or_init(|| {
        let sc = Scenario::from_toml(text).expect("bundled scenario is valid");
        (1..=100u64)
            .into_par_iter()
            .map(|seed| {
                let before = human_factors::evaluations_on_this_thread();
                let out = run_with_seed(&sc, seed).expect("bundled scenario runs");
                let calls = human_factors::evaluations_on_this_thread() - before;
                (seed, out, calls)
            })
            .collect()
    })
}

fn onsets(text: &str) -> Vec<f64> {
    Scenario::from_toml(text)
        .expect("bundled scenario is valid")
        .anomalies
        .iter()
        .map(|a| a.onset)
        .collect()
}

/// Per-detection aftermath: Λ reset, routing probability drop, queue trim.
fn detection_aftermath(trace: &Trace) -> (usize, usize, usize, usize, usize) {
    let (mut total, mut reset, mut dropped, mut trimmed, mut single_shot) = (0, 0, 0, 0, 0);
    let recs = &trace.records;
    for (i, r) in recs.iter().enumerate() {
        if r.event != EventKind::Detect {
            continue;
        }
        let k = r.region.expect("detect rows name a region");
        total += 1;
        reset += usize::from(r.statistics[k] == 0.0);
        trimmed += usize::from(r.queue_len <= 1);
        let before = recs[..i].iter().rev().find(|x| x.event == EventKind::Route);
        let after = recs[i..].iter().find(|x| x.event == EventKind::Route);
        let prior_q = before
            .map(|x| x.routing[k])
            .unwrap_or(1.0 / r.routing.len() as f64);
        let prior_stat = before.map(|x| x.statistics[k]).unwrap_or(0.0);
        if let Some(a) = after {
            // A statistic that was already 0 and crossed the threshold in a
            // single decision has no room to drop; its probability must stay put.
            let ok = if prior_stat > 0.0 {
                a.routing[k] < prior_q
            } else {
                a.routing[k] <= prior_q * (1.0 + 1e-12)
            };
            single_shot += usize::from(prior_stat == 0.0);
            dropped += usize::from(ok);
        }
    }
    (total, reset, dropped, trimmed, single_shot)
}

fn detection_findings(
    which: usize,
    text: &str,
    min_all: Option<f64>,
    ordered: bool,
) -> Vec<Finding> {
    let runs = case_runs(which);
    let onsets = onsets(text);
    let n = runs.len() as f64;
    let all = runs.iter().filter(|r| r.1.summary.all_detected()).count() as f64 / n;
    let in_order = runs
        .iter()
        .filter(|r| r.1.summary.detected_in_onset_order(&onsets))
        .count() as f64
        / n;
    let mut out = Vec::new();
    if ordered {
        out.push(Finding::new(
            "all four detected in onset order",
            in_order >= 0.9,
            format!("{:.0}% of seeds detect all four in onset order (all four in any order: {:.0}%)", 100.0 * in_order, 100.0 * all),
        )
        .known_gap());
    }
    if let Some(min) = min_all {
        out.push(Finding::new(
            "all four detected",
            all >= min,
            format!("{:.0}% of seeds detect all four anomalies", 100.0 * all),
        ));
    }
    let (mut total, mut reset, mut dropped, mut trimmed, mut single) = (0, 0, 0, 0, 0);
    for r in runs {
        let (a, b, c, d, e) = detection_aftermath(&r.1.trace);
        total += a;
        reset += b;
        dropped += c;
        trimmed += d;
        single += e;
    }
    out.push(Finding::new(
        "detection aftermath",
        reset == total && dropped == total && trimmed == total && total > 0,
        format!(
            "{total} detections: statistic reset {reset}, routing drop {dropped} ({single} from a zero statistic), queue trimmed {trimmed}"
        ),
    ));
    out
}

fn check_case1() -> Vec<Finding> {
    let mut out = detection_findings(1, bundled::CASE1, None, true);
    let calls: u64 = case_runs(1).iter().map(|r| r.2).sum();
    out.push(Finding::new(
        "no human factors",
        calls == 0,
        format!("human-factor evaluations = {calls}"),
    ));
    out
}

fn check_case2() -> Vec<Finding> {
    let sc = Scenario::from_toml(bundled::CASE2).expect("bundled scenario is valid");
    let u = &sc.operator.utilization;
    let mut out = detection_findings(2, bundled::CASE2, Some(0.8), false);

    let (mut util_ok, mut rests, mut rest_err, mut land_err) = (true, 0usize, 0.0f64, 0.0f64);
    let mut retained_ok = true;
    for (_, run, _) in case_runs(2) {
        let recs = &run.trace.records;
        let mut last_alloc = 0.0;
        let mut last_decide_util = None;
        for r in recs {
            match r.event {
                EventKind::Allocate => last_alloc = r.allocation.unwrap_or(0.0),
                EventKind::Decide => {
                    let cap = utilization_after_task(u.threshold, last_alloc, 0.0, u.sensitivity);
                    let util = r.utilization.unwrap_or(f64::NAN);
                    util_ok &= util <= cap + 1e-12;
                    last_decide_util = Some(util);
                }
                EventKind::Rest => {
                    rests += 1;
                    let before = last_decide_util.unwrap_or(f64::NAN);
                    let want = u.sensitivity * (before / u.optimal).ln();
                    rest_err = rest_err.max((r.rest.unwrap_or(f64::NAN) - want).abs());
                    land_err = land_err.max((r.utilization.unwrap_or(f64::NAN) - u.optimal).abs());
                }
                _ => {}
            }
            util_ok &= r.utilization.is_some_and(|x| x <= 1.0);
        }
        // retained belief only moves down between visits to a region
        let m = run.trace.region_count();
        for k in 0..m {
            let mut prev: Option<f64> = None;
            for r in recs {
                let touched =
                    r.region == Some(k) && matches!(r.event, EventKind::Decide | EventKind::Detect);
                let x = r.retained[k];
                if let Some(p) = prev {
                    if !touched && x > p + 1e-12 {
                        retained_ok = false;
                    }
                }
                retained_ok &= x >= 0.5;
                prev = Some(x);
            }
        }
    }
    out.push(Finding::new(
        "utilization bound",
        util_ok,
        format!("utilization within one task of the threshold = {util_ok}"),
    ));
    out.push(Finding::new(
        "rest durations",
        rests > 0 && rest_err <= 1e-9 && land_err <= 1e-9,
        format!(
            "{rests} rests, max duration error {rest_err:.1e}, max landing error {land_err:.1e}"
        ),
    ));
    out.push(Finding::new(
        "retained belief decay",
        retained_ok,
        format!("retained beliefs nonincreasing between visits = {retained_ok}"),
    ));
    out
}

fn csv_bytes(out: &RunOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trace(&mut buf, &out.trace).expect("in-memory write");
    buf
}

fn check_determinism() -> Vec<Finding> {
    let mut out = Vec::new();
    for (name, text) in [("case1", bundled::CASE1), ("case2", bundled::CASE2)] {
        let sc = Scenario::from_toml(text).expect("bundled scenario is valid");
        let a = csv_bytes(&run_with_seed(&sc, 7).expect("runs"));
        let b = csv_bytes(&run_with_seed(&sc, 7).expect("runs"));
        out.push(Finding::new(
            format!("{name} determinism"),
            a == b,
            format!("{name}: identical traces = {}", a == b),
        ));
        let round = sc.to_toml().ok().and_then(|t| Scenario::from_toml(&t).ok());
        let same = round.as_ref() == Some(&sc);
        out.push(Finding::new(
            format!("{name} round trip"),
            same,
            format!("{name}: round trip identity = {same}"),
        ));
    }
    out
}

fn check_safety() -> Vec<Finding> {
    let (mut beliefs, mut stats, mut routing) = (true, true, 0.0f64);
    let mut rows = 0usize;
    for which in [1, 2] {
        for (_, run, _) in case_runs(which) {
            for r in &run.trace.records {
                rows += 1;
                beliefs &= r
                    .beliefs
                    .iter()
                    .chain(&r.retained)
                    .all(|&b| (0.5..=1.0 - 1e-9).contains(&b));
                stats &= r.statistics.iter().all(|&s| s >= 0.0);
                routing = routing.max((r.routing.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    vec![
        Finding::new(
            "beliefs",
            beliefs,
            format!("{rows} rows, beliefs in [0.5, 1-1e-9] = {beliefs}"),
        ),
        Finding::new(
            "statistics",
            stats,
            format!("statistics nonnegative = {stats}"),
        ),
        Finding::new(
            "routing",
            routing <= 1e-12,
            format!("max routing-sum error = {routing:.1e}"),
        ),
    ]
}
