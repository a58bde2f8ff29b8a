//! Attention allocation: how long the operator should spend on the task at
//! the head of the queue.
//!
//! With deadlines, a certainty-equivalent receding-horizon problem is solved
//! by backward induction over a discretized queue length. Without deadlines,
//! the steady-state allocation is a knapsack problem with sigmoid utilities.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{FrozenTask, OperatorModel};
use crate::routing::RoutingPolicy;

/// A scalar function of allocated time, shared cheaply between snapshots.
pub type Curve = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const BISECTION_MAX_ITER: usize = 200;

/// One task as seen by the solver: frozen performance, importance, deadline
/// and the penalty rate for leaving it waiting.
#[derive(Clone)]
pub struct TaskSnapshot {
    pub region: usize,
    pub performance: Curve,
    pub weight: f64,
    pub deadline: f64,
    pub latency_rate: f64,
}

impl fmt::Debug for TaskSnapshot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TaskSnapshot")
            .field("region", &self.region)
            .field("weight", &self.weight)
            .field("deadline", &self.deadline)
            .field("latency_rate", &self.latency_rate)
            .finish_non_exhaustive()
    }
}

impl TaskSnapshot {
    /// Snapshot whose latency rate is derived from the performance slope at
    /// the deadline.
    pub fn new(
        region: usize,
        performance: Curve,
        weight: f64,
        deadline: f64,
        duration_step: f64,
    ) -> Result<Self> {
        if !(weight > 0.0) || !(deadline > 0.0) || !(duration_step > 0.0) {
            return Err(Error::domain(
                "TaskSnapshot",
                format!("weight, deadline and step must be > 0 (got {weight}, {deadline}, {duration_step})"),
            ));
        }
        let latency_rate = latency_rate(performance.as_ref(), weight, deadline, duration_step);
        Ok(TaskSnapshot {
            region,
            performance,
            weight,
            deadline,
            latency_rate,
        })
    }

    /// Snapshot of a task from `region` frozen with the operator model.
    pub fn from_operator(
        model: &OperatorModel,
        task: FrozenTask,
        region: usize,
        weight: f64,
        deadline: f64,
        duration_step: f64,
    ) -> Result<Self> {
        let model = model.clone();
        let performance: Curve = Arc::new(move |t| model.performance(t, &task));
        TaskSnapshot::new(region, performance, weight, deadline, duration_step)
    }

    pub fn performance_at(&self, t: f64) -> f64 {
        (self.performance)(t)
    }
}

fn central_difference(f: &dyn Fn(f64) -> f64, t: f64, h: f64) -> f64 {
    let lo = (t - h).max(0.0);
    let hi = t + h;
    (f(hi) - f(lo)) / (hi - lo)
}

/// Location of the steepest point of `f` on `[0, upper]`.
pub fn numerical_inflection(f: &dyn Fn(f64) -> f64, upper: f64) -> f64 {
    const SCAN: usize = 400;
    let h = (upper * 1e-6).max(1e-9);
    let slope = |t: f64| central_difference(f, t, h);
    let step = upper / SCAN as f64;
    let (mut best, mut best_slope) = (0.0, slope(0.0));
    for k in 1..=SCAN {
        let t = k as f64 * step;
        let s = slope(t);
        if s > best_slope {
            best = t;
            best_slope = s;
        }
    }
    let (lo, hi) = ((best - step).max(0.0), (best + step).min(upper));
    let (t, s) = golden_max(&slope, lo, hi, 80);
    if s > best_slope {
        t
    } else {
        best
    }
}

/// Golden-section maximization of a unimodal function on `[a, b]`.
fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64, iterations: usize) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iterations {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// `c = w·f′(T)`, the marginal accuracy forgone per unit of waiting.
///
/// The derivative is a central difference with step `duration_step / 10`.
/// A deadline at or before the inflection point makes the penalty
/// inadmissible; the rate is still returned, with a warning.
pub fn latency_rate(
    performance: &dyn Fn(f64) -> f64,
    weight: f64,
    deadline: f64,
    duration_step: f64,
) -> f64 {
    let slope = central_difference(performance, deadline, duration_step / 10.0);
    let inflection = numerical_inflection(performance, deadline);
    if inflection >= deadline - duration_step / 10.0 && slope > 1e-12 {
        log::warn!(
            "deadline {deadline} is not past the inflection point ({inflection:.3}); latency penalty may be inadmissible"
        );
    }
    weight * slope.max(0.0)
}

/// Expected parameters of a task that has not arrived yet.
#[derive(Clone)]
pub struct ExpectedTask {
    pub performance: Curve,
    pub weight: f64,
    pub latency_rate: f64,
    /// Longest deadline over regions the vehicle may visit.
    pub deadline: f64,
}

impl fmt::Debug for ExpectedTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExpectedTask")
            .field("weight", &self.weight)
            .field("latency_rate", &self.latency_rate)
            .field("deadline", &self.deadline)
            .finish_non_exhaustive()
    }
}

impl ExpectedTask {
    pub fn performance_at(&self, t: f64) -> f64 {
        (self.performance)(t)
    }
}

/// Routing-weighted averages of the per-region snapshots (one per region).
pub fn expected_task_params(
    routing: &RoutingPolicy,
    per_region: &[TaskSnapshot],
) -> Result<ExpectedTask> {
    let q = routing.probabilities();
    if q.len() != per_region.len() {
        return Err(Error::domain(
            "expected_task_params",
            format!(
                "{} routing entries for {} regions",
                q.len(),
                per_region.len()
            ),
        ));
    }
    let weight: f64 = q.iter().zip(per_region).map(|(qk, s)| qk * s.weight).sum();
    let latency_rate = q
        .iter()
        .zip(per_region)
        .map(|(qk, s)| qk * s.latency_rate)
        .sum();
    let deadline = per_region
        .iter()
        .zip(q)
        .filter(|(_, &qk)| qk > 0.0)
        .map(|(s, _)| s.deadline)
        .fold(0.0, f64::max);
    let mix: Vec<(f64, Curve)> = q
        .iter()
        .zip(per_region)
        .filter(|(&qk, _)| qk > 0.0)
        .map(|(qk, s)| (qk * s.weight / weight, s.performance.clone()))
        .collect();
    let performance: Curve = Arc::new(move |t| mix.iter().map(|(c, f)| c * f(t)).sum());
    Ok(ExpectedTask {
        performance,
        weight,
        latency_rate,
        deadline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    /// Spacing of candidate durations.
    pub duration_step: f64,
    /// Spacing of the discretized queue length.
    pub queue_step: f64,
    /// Largest queue length represented.
    pub queue_cap: f64,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            duration_step: 0.5,
            queue_step: 0.1,
            queue_cap: 50.0,
        }
    }
}

/// Data of one receding-horizon solve.
#[derive(Debug, Clone)]
pub struct HorizonProblem {
    pub horizon: usize,
    /// Tasks waiting, head first.
    pub queue: Vec<TaskSnapshot>,
    pub arrival_rate: f64,
    pub expected: ExpectedTask,
    pub grids: Grids,
}

impl HorizonProblem {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grids;
        let mut bad = Vec::new();
        if self.horizon == 0 {
            bad.push("horizon must be >= 1".to_string());
        }
        if !(g.duration_step > 0.0) {
            bad.push(format!(
                "duration step must be > 0, got {}",
                g.duration_step
            ));
        }
        if !(g.queue_step > 0.0) {
            bad.push(format!("queue step must be > 0, got {}", g.queue_step));
        }
        if !(g.queue_cap >= 1.0) {
            bad.push(format!("queue cap must be >= 1, got {}", g.queue_cap));
        }
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            bad.push(format!(
                "arrival rate must be finite and >= 0, got {}",
                self.arrival_rate
            ));
        }
        if self.queue.is_empty() {
            bad.push("queue is empty".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::domain("HorizonProblem", bad.join("; ")))
        }
    }

    fn queue_len(&self) -> usize {
        self.queue.len()
    }

    fn stage_deadline(&self, j: usize) -> f64 {
        if j <= self.queue_len() {
            self.queue[j - 1].deadline
        } else {
            self.expected.deadline
        }
    }

    /// Weighted accuracy term of stage `j` at duration `t`.
    fn stage_accuracy(&self, j: usize, t: f64) -> f64 {
        if j <= self.queue_len() {
            let task = &self.queue[j - 1];
            task.weight * task.performance_at(t)
        } else {
            self.expected.weight * self.expected.performance_at(t)
        }
    }

    /// Stage reward given its accuracy term; shared by the public reward
    /// functions and the DP so both agree to the last bit.
    fn stage_reward(&self, j: usize, t: f64, queue_length: f64, accuracy: f64) -> f64 {
        let c_bar = self.expected.latency_rate;
        let arrivals = 0.5 * c_bar * self.arrival_rate * t * t;
        let n = self.queue_len();
        if j <= n {
            let waiting: f64 = self.queue[j - 1..].iter().map(|s| s.latency_rate).sum();
            let predicted = (queue_length - n as f64 - j as f64 + 1.0).max(0.0) * c_bar;
            accuracy - arrivals - (waiting + predicted) * t
        } else {
            accuracy - c_bar * queue_length * t - arrivals
        }
    }
}

/// Reward of allocating `t` to the `j`-th queued task (1-based) when the
/// predicted queue length at its start is `queue_length`.
pub fn reward_realized(
    problem: &HorizonProblem,
    j: usize,
    t: f64,
    queue_length: f64,
) -> Result<f64> {
    if j == 0 || j > problem.queue_len() {
        return Err(Error::domain(
            "reward_realized",
            format!("position {j} outside the queue of {}", problem.queue_len()),
        ));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(
            "reward_realized",
            format!("duration must be >= 0, got {t}"),
        ));
    }
    let deadline = problem.queue[j - 1].deadline;
    let t = if t > deadline {
        log::warn!("duration {t} beyond deadline {deadline}; clamped");
        deadline
    } else {
        t
    };
    Ok(problem.stage_reward(j, t, queue_length, problem.stage_accuracy(j, t)))
}

/// Reward of allocating `t` to a predicted task at position `j` (beyond the
/// realized queue) with predicted queue length `queue_length`.
pub fn reward_expected(
    problem: &HorizonProblem,
    j: usize,
    t: f64,
    queue_length: f64,
) -> Result<f64> {
    if j <= problem.queue_len() || j > problem.horizon {
        return Err(Error::domain(
            "reward_expected",
            format!(
                "position {j} is not a predicted task (queue {}, horizon {})",
                problem.queue_len(),
                problem.horizon
            ),
        ));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(
            "reward_expected",
            format!("duration must be >= 0, got {t}"),
        ));
    }
    Ok(problem.stage_reward(j, t, queue_length, problem.stage_accuracy(j, t)))
}

/// `{0, Δt, 2Δt, …, deadline}`; the deadline is appended when it is not a
/// multiple of the step.
pub fn action_grid(deadline: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = k as f64 * step;
        if t >= deadline - 1e-9 * step {
            break;
        }
        out.push(t);
        k += 1;
    }
    out.push(deadline);
    out
}

/// Discretized certainty-equivalent queue lengths `{1, 1+Δn, …, n_max}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueGrid {
    points: Vec<f64>,
    step: f64,
}

impl QueueGrid {
    pub fn new(step: f64, cap: f64) -> Self {
        let mut points = Vec::new();
        let mut k = 0usize;
        loop {
            let n = 1.0 + k as f64 * step;
            if n >= cap - 1e-9 * step {
                break;
            }
            points.push(n);
            k += 1;
        }
        points.push(cap);
        QueueGrid { points, step }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Index of the grid point nearest to `n` after clamping to `[1, n_max]`;
    /// exact midpoints go to the lower point.
    pub fn nearest(&self, n: f64) -> usize {
        let last = self.points.len() - 1;
        let n = n.clamp(1.0, self.points[last]);
        let k = (((n - 1.0) / self.step).floor() as usize).min(last);
        if k == last {
            return last;
        }
        if n - self.points[k] <= self.points[k + 1] - n {
            k
        } else {
            k + 1
        }
    }
}

/// Next certainty-equivalent queue length, `max(1, n - 1 + λt)`.
pub fn queue_transition(n: f64, arrival_rate: f64, t: f64) -> f64 {
    (n - 1.0 + arrival_rate * t).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonSolution {
    /// Optimal first-stage duration.
    pub duration: f64,
    /// Optimal average reward over the horizon.
    pub value: f64,
    pub queue_states: usize,
    pub stage_actions: Vec<usize>,
}

/// Backward induction over stages and the quantized queue length. The first
/// stage starts from the exact queue length; later stages use the nearest
/// grid point. Ties go to the smallest duration.
pub fn solve_horizon(problem: &HorizonProblem) -> Result<HorizonSolution> {
    problem.validate()?;
    let n_stages = problem.horizon;
    let grid = QueueGrid::new(problem.grids.queue_step, problem.grids.queue_cap);
    let states = grid.points();
    let lambda = problem.arrival_rate;

    let actions: Vec<Vec<f64>> = (1..=n_stages)
        .map(|j| action_grid(problem.stage_deadline(j), problem.grids.duration_step))
        .collect();
    let accuracy: Vec<Vec<f64>> = actions
        .iter()
        .enumerate()
        .map(|(i, ts)| {
            ts.iter()
                .map(|&t| problem.stage_accuracy(i + 1, t))
                .collect()
        })
        .collect();

    let stage_value = |j: usize, n: f64, next: &[f64]| -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, 0.0);
        for (a, &t) in actions[j - 1].iter().enumerate() {
            let mut v = problem.stage_reward(j, t, n, accuracy[j - 1][a]);
            if j < n_stages {
                v += next[grid.nearest(queue_transition(n, lambda, t))];
            }
            if v > best.0 {
                best = (v, t);
            }
        }
        best
    };

    let mut next = vec![0.0; states.len()];
    for j in (2..=n_stages).rev() {
        next = states.iter().map(|&n| stage_value(j, n, &next).0).collect();
    }
    let (total, duration) = stage_value(1, problem.queue_len() as f64, &next);
    Ok(HorizonSolution {
        duration,
        value: total / n_stages as f64,
        queue_states: states.len(),
        stage_actions: actions.iter().map(Vec::len).collect(),
    })
}

/// Deadline for the head task when the operator already leans strongly
/// towards an anomaly there; otherwise the receding-horizon allocation.
pub fn allocate(
    problem: &HorizonProblem,
    head_belief: f64,
    critical_belief: f64,
) -> Result<(f64, Option<HorizonSolution>)> {
    problem.validate()?;
    if head_belief > critical_belief {
        return Ok((problem.queue[0].deadline, None));
    }
    let sol = solve_horizon(problem)?;
    Ok((sol.duration, Some(sol)))
}

/// A sigmoid utility with a weight, as used by the knapsack solver.
#[derive(Clone)]
pub struct SigmoidItem {
    utility: Curve,
    derivative: Option<Curve>,
    pub weight: f64,
    pub inflection: f64,
}

impl fmt::Debug for SigmoidItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigmoidItem")
            .field("weight", &self.weight)
            .field("inflection", &self.inflection)
            .finish_non_exhaustive()
    }
}

impl SigmoidItem {
    /// `1 / (1 + e^{-rate (t - midpoint)})`.
    pub fn logistic(rate: f64, midpoint: f64, weight: f64) -> Result<Self> {
        if !(rate > 0.0) || !(weight > 0.0) {
            return Err(Error::domain(
                "SigmoidItem::logistic",
                format!("rate and weight must be > 0 (got {rate}, {weight})"),
            ));
        }
        let f = move |t: f64| 1.0 / (1.0 + (-rate * (t - midpoint)).exp());
        Ok(SigmoidItem {
            utility: Arc::new(f),
            derivative: Some(Arc::new(move |t| {
                let y = f(t);
                rate * y * (1.0 - y)
            })),
            weight,
            inflection: midpoint.max(0.0),
        })
    }

    /// Item with numerical derivative; the inflection point is searched on
    /// `[0, support]`.
    pub fn from_fn(utility: Curve, weight: f64, support: f64) -> Result<Self> {
        if !(weight > 0.0) || !(support > 0.0) {
            return Err(Error::domain(
                "SigmoidItem::from_fn",
                format!("weight and support must be > 0 (got {weight}, {support})"),
            ));
        }
        let inflection = numerical_inflection(utility.as_ref(), support);
        Ok(SigmoidItem {
            utility,
            derivative: None,
            weight,
            inflection,
        })
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.utility)(t)
    }

    pub fn slope(&self, t: f64) -> f64 {
        match &self.derivative {
            Some(d) => d(t),
            None => central_difference(self.utility.as_ref(), t, 1e-6 * t.max(1.0)),
        }
    }

    pub fn peak_slope(&self) -> f64 {
        self.slope(self.inflection)
    }
}

/// `f†(y) = max{t : f′(t) = y}` when `y ≤ f′(t_inf)`, else 0.
pub fn sigmoid_pseudo_inverse(item: &SigmoidItem, slope: f64) -> f64 {
    let t0 = item.inflection;
    if !(slope > 0.0) || slope > item.peak_slope() {
        return 0.0;
    }
    let mut width = t0.max(1.0);
    while item.slope(t0 + width) >= slope {
        width *= 2.0;
        if width > 1e12 {
            return t0 + width;
        }
    }
    let (mut lo, mut hi) = (t0, t0 + width);
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if item.slope(mid) >= slope {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnapsackSolution {
    pub allocations: Vec<f64>,
    /// `Σ w_k f_k(t_k)`.
    pub value: f64,
    /// Maximizer of the relaxed value over the slope parameter.
    pub alpha: f64,
}

struct Relaxation {
    value: f64,
    sizes: Vec<f64>,
    full: Vec<bool>,
}

fn gains(items: &[SigmoidItem], k: usize, t: f64) -> f64 {
    items[k].weight * (items[k].value(t) - items[k].value(0.0))
}

/// Fractional knapsack of the items at sizes `f†(α/w_k)`, filled greedily
/// by value density.
fn relaxation(items: &[SigmoidItem], budget: f64, alpha: f64) -> Relaxation {
    let sizes: Vec<f64> = items
        .iter()
        .map(|it| sigmoid_pseudo_inverse(it, alpha / it.weight))
        .collect();
    let values: Vec<f64> = (0..items.len())
        .map(|k| gains(items, k, sizes[k]))
        .collect();
    let mut order: Vec<usize> = (0..items.len()).filter(|&k| sizes[k] > 0.0).collect();
    order.sort_by(|&a, &b| {
        (values[b] / sizes[b])
            .partial_cmp(&(values[a] / sizes[a]))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut full = vec![false; items.len()];
    let mut left = budget;
    let mut value = 0.0;
    for k in order {
        if sizes[k] <= left {
            full[k] = true;
            left -= sizes[k];
            value += values[k];
        } else {
            value += values[k] * left / sizes[k];
            break;
        }
    }
    Relaxation { value, sizes, full }
}

/// Allocates `budget` across sigmoid items (the 2-approximation of the
/// knapsack with sigmoid utilities).
pub fn knapsack_sigmoid(items: &[SigmoidItem], budget: f64) -> Result<KnapsackSolution> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::domain(
            "knapsack_sigmoid",
            format!("budget must be finite and >= 0, got {budget}"),
        ));
    }
    let total = |alloc: &[f64]| -> f64 {
        items
            .iter()
            .zip(alloc)
            .map(|(it, &t)| it.weight * it.value(t))
            .sum()
    };
    if items.is_empty() || budget == 0.0 {
        let allocations = vec![0.0; items.len()];
        return Ok(KnapsackSolution {
            value: total(&allocations),
            allocations,
            alpha: 0.0,
        });
    }

    const STARTS: usize = 64;
    let alpha_max = items
        .iter()
        .map(|it| it.weight * it.peak_slope())
        .fold(0.0, f64::max);
    let (lo, hi) = ((alpha_max * 1e-6).ln(), alpha_max.ln());
    let f_lp = |log_alpha: f64| relaxation(items, budget, log_alpha.exp()).value;
    let grid: Vec<f64> = (0..STARTS)
        .map(|i| lo + (hi - lo) * i as f64 / (STARTS - 1) as f64)
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&a| f_lp(a)).collect();

    let mut best = (grid[0], scores[0]);
    for (&a, &s) in grid.iter().zip(&scores) {
        if s > best.1 {
            best = (a, s);
        }
    }
    let mut ranked: Vec<usize> = (0..STARTS).collect();
    ranked.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for &i in ranked.iter().take(4) {
        let a = grid[i.saturating_sub(1)];
        let b = grid[(i + 1).min(STARTS - 1)];
        let (x, fx) = golden_max(&f_lp, a, b, 60);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    let alpha = best.0.exp();

    let rel = relaxation(items, budget, alpha);
    let mut allocations: Vec<f64> = (0..items.len())
        .map(|k| if rel.full[k] { rel.sizes[k] } else { 0.0 })
        .collect();
    let used: f64 = allocations.iter().sum();
    let residual = (budget - used).max(0.0);
    if residual > 0.0 {
        let target = (0..items.len())
            .filter(|&k| !rel.full[k])
            .map(|k| (k, gains(items, k, residual)))
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if let Some((k, _)) = target {
            allocations[k] = residual;
        }
    }
    Ok(KnapsackSolution {
        value: total(&allocations),
        allocations,
        alpha,
    })
}

/// Steady-state durations per region when tasks have no deadlines: maximize
/// `Σ q_k w_k f_k(t_k)` subject to `Σ q_k t_k ≤ 1/λ`.
///
/// With `s_k = q_k t_k` this is a sigmoid knapsack with utilities
/// `f_k(s/q_k)`, weights `q_k w_k` and budget `1/λ`.
pub fn no_deadline_allocation(
    routing: &RoutingPolicy,
    tasks: &[TaskSnapshot],
    arrival_rate: f64,
) -> Result<Vec<f64>> {
    if !(arrival_rate > 0.0) {
        return Err(Error::domain(
            "no_deadline_allocation",
            format!("arrival rate must be > 0, got {arrival_rate}"),
        ));
    }
    let q = routing.probabilities();
    if q.len() != tasks.len() {
        return Err(Error::domain(
            "no_deadline_allocation",
            format!("{} routing entries for {} regions", q.len(), tasks.len()),
        ));
    }
    let visited: Vec<usize> = (0..q.len()).filter(|&k| q[k] > 0.0).collect();
    let items = visited
        .iter()
        .map(|&k| {
            let (qk, f) = (q[k], tasks[k].performance.clone());
            let g: Curve = Arc::new(move |s| f(s / qk));
            SigmoidItem::from_fn(g, qk * tasks[k].weight, qk * tasks[k].deadline)
        })
        .collect::<Result<Vec<_>>>()?;
    let sol = knapsack_sigmoid(&items, 1.0 / arrival_rate)?;
    let mut out = vec![0.0; q.len()];
    for (i, &k) in visited.iter().enumerate() {
        out[k] = sol.allocations[i] / q[k];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(c: f64) -> Curve {
        Arc::new(move |_| c)
    }

    fn ramp(deadline: f64) -> Curve {
        Arc::new(move |t: f64| 0.5 + 0.5 * (t / deadline).min(1.0))
    }

    fn snapshot(perf: Curve, weight: f64, deadline: f64, rate: f64) -> TaskSnapshot {
        TaskSnapshot {
            region: 0,
            performance: perf,
            weight,
            deadline,
            latency_rate: rate,
        }
    }

    fn problem(
        queue: Vec<TaskSnapshot>,
        c_bar: f64,
        lambda: f64,
        horizon: usize,
    ) -> HorizonProblem {
        HorizonProblem {
            horizon,
            queue,
            arrival_rate: lambda,
            expected: ExpectedTask {
                performance: ramp(40.0),
                weight: 1.0,
                latency_rate: c_bar,
                deadline: 40.0,
            },
            grids: Grids::default(),
        }
    }

    #[test]
    fn action_grid_appends_deadline() {
        assert_eq!(action_grid(1.0, 0.5), vec![0.0, 0.5, 1.0]);
        assert_eq!(action_grid(1.2, 0.5), vec![0.0, 0.5, 1.0, 1.2]);
    }

    #[test]
    fn queue_grid_nearest() {
        let g = QueueGrid::new(0.5, 3.0);
        assert_eq!(g.points(), &[1.0, 1.5, 2.0, 2.5, 3.0]);
        assert_eq!(g.nearest(0.2), 0);
        assert_eq!(g.nearest(1.25), 0);
        assert_eq!(g.nearest(1.26), 1);
        assert_eq!(g.nearest(9.0), 4);
    }

    #[test]
    fn transition_floors_at_one() {
        assert_eq!(queue_transition(1.0, 0.01, 10.0), 1.0);
        assert!((queue_transition(3.0, 0.1, 10.0) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn rewards_vanish_at_zero_allocation() {
        let p = problem(vec![snapshot(ramp(40.0), 1.0, 40.0, 0.3)], 0.2, 0.04, 3);
        assert_eq!(reward_realized(&p, 1, 0.0, 1.0).unwrap(), 0.5);
        let p0 = problem(vec![snapshot(constant(0.0), 1.0, 40.0, 0.3)], 0.2, 0.04, 3);
        assert_eq!(reward_realized(&p0, 1, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(reward_expected(&p, 2, 0.0, 2.0).unwrap(), 0.5);
    }

    #[test]
    fn rewards_without_penalties_are_accuracy() {
        let p = problem(vec![snapshot(ramp(40.0), 2.0, 40.0, 0.0)], 0.0, 0.04, 3);
        assert_eq!(reward_realized(&p, 1, 20.0, 1.0).unwrap(), 2.0 * 0.75);
        assert_eq!(reward_expected(&p, 3, 20.0, 4.0).unwrap(), 0.75);
    }

    #[test]
    fn two_task_hand_instance() {
        // term by term: w f(t) - ½ c̄ λ t² - (Σ_{i≥j} c_i + max(0, n̄ - n - j + 1) c̄) t
        let q = vec![
            snapshot(ramp(40.0), 1.0, 40.0, 0.01),
            snapshot(ramp(20.0), 2.0, 20.0, 0.02),
        ];
        let p = problem(q, 0.015, 0.04, 4);
        let t = 10.0;
        let r1 = reward_realized(&p, 1, t, 2.0).unwrap();
        let want1 = 0.625 - 0.5 * 0.015 * 0.04 * 100.0 - (0.03 + 0.0) * 10.0;
        assert!((r1 - want1).abs() < 1e-15);
        let r2 = reward_realized(&p, 2, t, 3.5).unwrap();
        let want2 = 2.0 * 0.75 - 0.5 * 0.015 * 0.04 * 100.0 - (0.02 + 0.5 * 0.015) * 10.0;
        assert!((r2 - want2).abs() < 1e-15);
        let r3 = reward_expected(&p, 3, t, 2.5).unwrap();
        let want3 = 0.625 - 0.015 * 2.5 * 10.0 - 0.5 * 0.015 * 0.04 * 100.0;
        assert!((r3 - want3).abs() < 1e-15);

        assert!(reward_realized(&p, 3, t, 1.0).is_err());
        assert!(reward_expected(&p, 2, t, 1.0).is_err());
        assert!(reward_expected(&p, 5, t, 1.0).is_err());
    }

    #[test]
    fn realized_reward_clamps_past_deadline() {
        let p = problem(vec![snapshot(ramp(40.0), 1.0, 40.0, 0.0)], 0.0, 0.04, 1);
        assert_eq!(reward_realized(&p, 1, 50.0, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn monotone_objective_takes_the_deadline() {
        let p = problem(vec![snapshot(ramp(40.0), 1.0, 40.0, 0.0)], 0.0, 0.04, 1);
        assert_eq!(solve_horizon(&p).unwrap().duration, 40.0);
    }

    #[test]
    fn ties_go_to_the_shortest_duration() {
        let p = problem(vec![snapshot(constant(0.7), 1.0, 40.0, 0.0)], 0.0, 0.04, 1);
        assert_eq!(solve_horizon(&p).unwrap().duration, 0.0);
    }

    #[test]
    fn empty_queue_is_rejected() {
        let p = problem(vec![], 0.0, 0.04, 1);
        assert!(solve_horizon(&p).is_err());
    }

    #[test]
    fn override_rule() {
        let p = problem(vec![snapshot(constant(0.7), 1.0, 40.0, 0.0)], 0.0, 0.04, 1);
        assert_eq!(allocate(&p, 0.85, 0.8).unwrap().0, 40.0);
        assert_eq!(allocate(&p, 0.8, 0.8).unwrap().0, 0.0);
        assert_eq!(allocate(&p, 0.5, 0.8).unwrap().0, 0.0);
    }

    #[test]
    fn latency_rate_examples() {
        let flat = constant(0.9);
        assert_eq!(latency_rate(flat.as_ref(), 1.0, 40.0, 0.5), 0.0);
        let r = ramp(80.0);
        let c1 = latency_rate(r.as_ref(), 1.0, 40.0, 0.5);
        let c2 = latency_rate(r.as_ref(), 2.0, 40.0, 0.5);
        assert!((c1 - 0.5 / 80.0).abs() < 1e-12);
        assert!((c2 - 2.0 * c1).abs() < 1e-15);
    }

    #[test]
    fn expected_params_collapse_and_mix() {
        let a = snapshot(ramp(40.0), 2.0, 40.0, 0.1);
        let b = snapshot(constant(0.6), 1.0, 30.0, 0.3);
        let one = expected_task_params(
            &RoutingPolicy::new(vec![1.0, 0.0]).unwrap(),
            &[a.clone(), b.clone()],
        )
        .unwrap();
        assert_eq!(one.weight, 2.0);
        assert_eq!(one.latency_rate, 0.1);
        assert_eq!(one.deadline, 40.0);
        assert!((one.performance_at(20.0) - 0.75).abs() < 1e-15);

        let same =
            expected_task_params(&RoutingPolicy::uniform(2), &[b.clone(), b.clone()]).unwrap();
        assert!((same.performance_at(3.0) - 0.6).abs() < 1e-15);
        assert!((same.weight - 1.0).abs() < 1e-15);
        assert!((same.latency_rate - 0.3).abs() < 1e-15);

        let mix = expected_task_params(&RoutingPolicy::uniform(2), &[a, b]).unwrap();
        assert!((mix.weight - 1.5).abs() < 1e-15);
        assert!((mix.latency_rate - 0.2).abs() < 1e-15);
        let want = (0.5 * 2.0 * 0.75 + 0.5 * 1.0 * 0.6) / 1.5;
        assert!((mix.performance_at(20.0) - want).abs() < 1e-15);
    }

    #[test]
    fn pseudo_inverse_branches() {
        let it = SigmoidItem::logistic(0.5, 10.0, 1.0).unwrap();
        let peak = it.peak_slope();
        assert_eq!(sigmoid_pseudo_inverse(&it, peak * 1.01), 0.0);
        assert!((sigmoid_pseudo_inverse(&it, peak) - 10.0).abs() < 1e-6);
        let t = sigmoid_pseudo_inverse(&it, 0.5 * peak);
        assert!(t > 10.0);
        assert!((it.slope(t) - 0.5 * peak).abs() < 1e-10);
    }

    #[test]
    fn numerical_items_locate_the_inflection() {
        let f: Curve = Arc::new(|t: f64| 1.0 / (1.0 + (-(t - 7.0)).exp()));
        let it = SigmoidItem::from_fn(f, 1.0, 30.0).unwrap();
        assert!((it.inflection - 7.0).abs() < 1e-4);
    }

    #[test]
    fn knapsack_zero_budget() {
        let items = vec![SigmoidItem::logistic(1.0, 5.0, 1.0).unwrap()];
        let s = knapsack_sigmoid(&items, 0.0).unwrap();
        assert_eq!(s.allocations, vec![0.0]);
    }
}
