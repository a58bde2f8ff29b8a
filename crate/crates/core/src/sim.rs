//! Closed-loop discrete-event simulation of the vehicle, the operator's
//! queue, decision support, and anomaly detection.
//!
//! The vehicle and the operator are two processes in simulated time. The
//! vehicle visits regions drawn from the current routing policy and enqueues
//! one task per visit. The operator serves the queue first-come-first-served,
//! spending on each task the duration chosen by decision support, and idles
//! when the queue is empty. When both processes act at the same instant the
//! vehicle goes first.

use std::collections::VecDeque;
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ddm::{Decision, Hypothesis};
use crate::decision_support::{
    allocate, expected_task_params, no_deadline_allocation, Grids, HorizonProblem, TaskSnapshot,
};
use crate::detection::CusumBank;
use crate::error::{Error, Result};
use crate::human_factors;
use crate::operator::{FrozenEvidence, FrozenTask, OperatorModel, OperatorState};
use crate::routing::{
    chain_cycle_time, expected_cycle_time, likelihood_routing, metropolis_hastings, sample_index,
    RoutingPolicy, SurveillanceGraph,
};
use crate::scenario::{AllocationMode, RoutingMode, Scenario};
use crate::trace::{EventKind, Trace, TraceRecord};

const ROUTING_STREAM: u64 = 1;
const DECISION_STREAM: u64 = 2;

/// A queued decision-making task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub region: usize,
    pub enqueued_at: f64,
    /// Ground truth of the region when the evidence was collected.
    pub anomalous: bool,
}

/// Correct label with probability `accuracy`, the other one otherwise.
pub fn simulate_operator_decision<R: Rng + ?Sized>(
    rng: &mut R,
    truth: Hypothesis,
    accuracy: f64,
) -> Decision {
    let correct = truth.label();
    if rng.random::<f64>() < accuracy {
        correct
    } else {
        match correct {
            Decision::Anomalous => Decision::Nominal,
            Decision::Nominal => Decision::Anomalous,
        }
    }
}

/// Keeps only the oldest pending task.
pub fn drop_pending(queue: &mut VecDeque<Task>) {
    queue.truncate(1);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub time: f64,
    pub region: usize,
    /// Whether the region was anomalous when the detection fired.
    pub true_positive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub tasks_processed: usize,
    pub detections: Vec<Detection>,
    /// Time each scheduled anomaly was detected (and removed), in schedule order.
    pub anomaly_detected_at: Vec<Option<f64>>,
    pub false_alarms: usize,
    /// Time-averaged number of tasks waiting or in service.
    pub mean_queue_length: f64,
    pub max_queue_length: usize,
}

impl RunSummary {
    pub fn all_detected(&self) -> bool {
        self.anomaly_detected_at.iter().all(Option::is_some)
    }

    /// Every anomaly detected, and detection times ordered like the onsets.
    pub fn detected_in_onset_order(&self, onsets: &[f64]) -> bool {
        if !self.all_detected() {
            return false;
        }
        let mut idx: Vec<usize> = (0..onsets.len()).collect();
        idx.sort_by(|&a, &b| onsets[a].total_cmp(&onsets[b]));
        idx.windows(2).all(|w| {
            self.anomaly_detected_at[w[0]].unwrap() < self.anomaly_detected_at[w[1]].unwrap()
        })
    }

    pub fn detections_per_region(&self, regions: usize) -> Vec<usize> {
        let mut c = vec![0; regions];
        for d in &self.detections {
            c[d.region] += 1;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AnomalyStatus {
    Pending,
    Active,
    Removed(f64),
}

struct InProgress {
    task: Task,
    finish: f64,
    allocation: f64,
    frozen: FrozenTask,
}

enum Activity {
    Idle { since: f64 },
    Working(Box<InProgress>),
    Resting { until: f64 },
}

struct Engine<'a> {
    scenario: &'a Scenario,
    graph: SurveillanceGraph,
    model: OperatorModel,
    grids: Grids,
    state: OperatorState,
    bank: CusumBank,
    policy: RoutingPolicy,
    transition: Option<Vec<Vec<f64>>>,
    queue: VecDeque<Task>,
    anomalies: Vec<(usize, f64, AnomalyStatus)>,
    route_rng: ChaCha8Rng,
    decision_rng: ChaCha8Rng,
    records: Vec<TraceRecord>,
    detections: Vec<Detection>,
    activity: Activity,
    next_arrival: (f64, usize),
    tasks_processed: usize,
    queue_area: f64,
    queue_clock: f64,
    max_queue: usize,
}

fn context(time: f64, event: &'static str) -> impl FnOnce(Error) -> Error {
    move |e| Error::Simulation {
        time,
        event,
        source: Box::new(e),
    }
}

/// Runs the scenario with its own seed.
pub fn run(scenario: &Scenario) -> Result<RunOutput> {
    run_with_seed(scenario, scenario.run.seed)
}

pub fn run_with_seed(scenario: &Scenario, seed: u64) -> Result<RunOutput> {
    let errs = scenario.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut engine = Engine::new(scenario, seed)?;
    engine.run()?;
    Ok(engine.finish(seed))
}

/// Independent replications over `seeds`, in parallel, ordered by seed.
pub fn sweep(scenario: &Scenario, seeds: RangeInclusive<u64>) -> Result<Vec<RunSummary>> {
    let seeds: Vec<u64> = seeds.collect();
    seeds
        .par_iter()
        .map(|&s| run_with_seed(scenario, s).map(|o| o.summary))
        .collect()
}

impl<'a> Engine<'a> {
    fn new(scenario: &'a Scenario, seed: u64) -> Result<Self> {
        let graph = scenario.surveillance_graph();
        let m = graph.region_count();
        let model = scenario.operator_model();
        let mut route_rng = ChaCha8Rng::seed_from_u64(seed);
        route_rng.set_stream(ROUTING_STREAM);
        let mut decision_rng = ChaCha8Rng::seed_from_u64(seed);
        decision_rng.set_stream(DECISION_STREAM);

        let anomalies = scenario
            .anomalies
            .iter()
            .map(|a| (a.region - 1, a.onset, AnomalyStatus::Pending))
            .collect();

        let mut engine = Engine {
            scenario,
            model,
            grids: scenario.grids(),
            state: OperatorState::new(
                m,
                scenario.operator.initial_utilization,
                scenario.operator.sleep.wake_hour,
            ),
            bank: CusumBank::new(m, scenario.algorithm.cusum_threshold)?,
            policy: RoutingPolicy::uniform(m),
            transition: None,
            queue: VecDeque::new(),
            anomalies,
            route_rng,
            decision_rng,
            records: Vec::new(),
            detections: Vec::new(),
            activity: Activity::Idle { since: 0.0 },
            next_arrival: (0.0, 0),
            tasks_processed: 0,
            queue_area: 0.0,
            queue_clock: 0.0,
            max_queue: 0,
            graph,
        };
        engine.refresh_transition()?;
        let first = sample_index(engine.policy.probabilities(), &mut engine.route_rng);
        engine.next_arrival = (engine.graph.collection[first], first);
        Ok(engine)
    }

    fn refresh_transition(&mut self) -> Result<()> {
        if self.scenario.algorithm.routing == RoutingMode::MetropolisHastings {
            self.transition = Some(metropolis_hastings(
                &self.graph.adjacency,
                self.policy.probabilities(),
            )?);
        }
        Ok(())
    }

    fn in_system(&self) -> usize {
        self.queue.len() + usize::from(matches!(self.activity, Activity::Working(_)))
    }

    fn advance_queue_clock(&mut self, now: f64) {
        self.queue_area += self.in_system() as f64 * (now - self.queue_clock);
        self.queue_clock = now;
    }

    fn run(&mut self) -> Result<()> {
        let horizon = self.scenario.run.duration;
        loop {
            let operator_next = match &self.activity {
                Activity::Idle { .. } => f64::INFINITY,
                Activity::Working(w) => w.finish,
                Activity::Resting { until } => *until,
            };
            let arrival = self.next_arrival.0;
            let now = arrival.min(operator_next);
            if now > horizon {
                self.advance_queue_clock(horizon);
                return Ok(());
            }
            self.advance_queue_clock(now);
            if arrival <= operator_next {
                self.arrive(now).map_err(context(now, "enqueue"))?;
            } else if let Activity::Resting { until } = self.activity {
                self.activity = Activity::Idle { since: until };
            } else {
                self.complete(now).map_err(context(now, "decide"))?;
            }
            self.try_start(now).map_err(context(now, "allocate"))?;
        }
    }

    fn is_anomalous(&mut self, region: usize, now: f64) -> bool {
        let mut active = false;
        for a in self.anomalies.iter_mut().filter(|a| a.0 == region) {
            if a.2 == AnomalyStatus::Pending && a.1 <= now {
                a.2 = AnomalyStatus::Active;
            }
            active |= a.2 == AnomalyStatus::Active;
        }
        active
    }

    fn arrive(&mut self, now: f64) -> Result<()> {
        let region = self.next_arrival.1;
        let anomalous = self.is_anomalous(region, now);
        self.queue.push_back(Task {
            region,
            enqueued_at: now,
            anomalous,
        });
        self.max_queue = self.max_queue.max(self.in_system());
        self.record(now, EventKind::Enqueue, Some(region))?;

        let next = match &self.transition {
            Some(a) => sample_index(&a[region], &mut self.route_rng),
            None => sample_index(self.policy.probabilities(), &mut self.route_rng),
        };
        let travel = self.graph.travel[region][next] + self.graph.collection[next];
        self.next_arrival = (now + travel, next);
        Ok(())
    }

    fn try_start(&mut self, now: f64) -> Result<()> {
        let Activity::Idle { since } = self.activity else {
            return Ok(());
        };
        if self.queue.is_empty() {
            return Ok(());
        }
        self.model.idle(&mut self.state, now - since);
        self.start(now)
    }

    fn snapshots(&self, now: f64) -> Result<(Vec<FrozenTask>, Vec<TaskSnapshot>)> {
        let m = self.graph.region_count();
        let mut frozen = Vec::with_capacity(m);
        let mut snaps = Vec::with_capacity(m);
        for k in 0..m {
            let f = self.model.freeze(&self.state, k, now)?;
            snaps.push(TaskSnapshot::from_operator(
                &self.model,
                f,
                k,
                self.graph.weights[k],
                self.graph.deadlines[k],
                self.grids.duration_step,
            )?);
            frozen.push(f);
        }
        Ok((frozen, snaps))
    }

    fn arrival_rate(&self) -> f64 {
        let cycle = match &self.transition {
            Some(a) => chain_cycle_time(&self.policy, a, &self.graph),
            None => expected_cycle_time(&self.policy, &self.graph),
        };
        1.0 / cycle
    }

    fn start(&mut self, now: f64) -> Result<()> {
        let head = self.queue[0];
        let (frozen, snaps) = self.snapshots(now)?;
        let lambda = self.arrival_rate();
        let head_belief = self.model.working_belief(&self.state, head.region, now);
        let critical = self.scenario.algorithm.critical_belief;
        let deadline = self.graph.deadlines[head.region];

        let (allocation, dp_value) = match self.scenario.algorithm.allocation {
            AllocationMode::RecedingHorizon => {
                let problem = HorizonProblem {
                    horizon: self.scenario.algorithm.horizon,
                    queue: self.queue.iter().map(|t| snaps[t.region].clone()).collect(),
                    arrival_rate: lambda,
                    expected: expected_task_params(&self.policy, &snaps)?,
                    grids: self.grids,
                };
                let (t, sol) = allocate(&problem, head_belief, critical)?;
                (t, sol.map(|s| s.value))
            }
            AllocationMode::Knapsack => {
                if head_belief > critical {
                    (deadline, None)
                } else {
                    let t = no_deadline_allocation(&self.policy, &snaps, lambda)?[head.region];
                    (t.min(deadline), None)
                }
            }
        };

        let frozen_head = frozen[head.region];
        let mut row = self.row(now, EventKind::Allocate, Some(head.region))?;
        row.allocation = Some(allocation);
        row.dp_value = dp_value;
        if let FrozenEvidence::Unified { terms, conditions } = frozen_head.evidence {
            row.task_effectiveness = Some(conditions.task_effectiveness);
            row.motor_time = Some(terms.wait);
        }
        self.records.push(row);

        self.queue.pop_front();
        self.activity = Activity::Working(Box::new(InProgress {
            task: head,
            finish: now + allocation,
            allocation,
            frozen: frozen_head,
        }));
        Ok(())
    }

    fn complete(&mut self, now: f64) -> Result<()> {
        let Activity::Working(job) =
            std::mem::replace(&mut self.activity, Activity::Idle { since: now })
        else {
            unreachable!("complete() called while not working");
        };
        let InProgress {
            task,
            allocation,
            frozen,
            ..
        } = *job;
        let region = task.region;
        self.tasks_processed += 1;

        let decision = if allocation > 0.0 {
            let lk = self.model.likelihoods(allocation, &frozen);
            let (truth, accuracy) = if task.anomalous {
                (Hypothesis::Anomalous, lk.f1)
            } else {
                (Hypothesis::Nominal, lk.f0)
            };
            Some(simulate_operator_decision(
                &mut self.decision_rng,
                truth,
                accuracy,
            ))
        } else {
            None
        };

        let likelihoods = match decision {
            Some(d) => {
                self.model
                    .process_decision(&mut self.state, region, allocation, d, now, &frozen)?
            }
            None => {
                self.model.process_decision(
                    &mut self.state,
                    region,
                    0.0,
                    Decision::Nominal,
                    now,
                    &frozen,
                )?;
                None
            }
        };
        let detected = match (decision, likelihoods) {
            (Some(d), Some(lk)) => self
                .bank
                .observe(region, allocation, d, lk.f1, lk.f0)?
                .unwrap_or(false),
            _ => false,
        };
        let mut row = self.row(now, EventKind::Decide, Some(region))?;
        row.allocation = Some(allocation);
        row.decision = decision;
        self.records.push(row);

        if detected {
            let true_positive = self.is_anomalous(region, now);
            for a in self.anomalies.iter_mut().filter(|a| a.0 == region) {
                if a.2 == AnomalyStatus::Active {
                    a.2 = AnomalyStatus::Removed(now);
                }
            }
            self.detections.push(Detection {
                time: now,
                region,
                true_positive,
            });
            self.state.reset_after_detection(region);
            self.advance_queue_clock(now);
            drop_pending(&mut self.queue);
            self.record(now, EventKind::Detect, Some(region))?;
        }

        self.policy = likelihood_routing(&self.bank);
        self.refresh_transition()?;
        self.record(now, EventKind::Route, None)?;

        if let OperatorModel::Unified { factors, .. } = &self.model {
            if self.state.utilization > factors.utilization.threshold {
                let rest = human_factors::rest_time(self.state.utilization, &factors.utilization);
                self.model.idle(&mut self.state, rest);
                let mut row = self.row(now, EventKind::Rest, None)?;
                row.rest = Some(rest);
                self.records.push(row);
                self.activity = Activity::Resting { until: now + rest };
            }
        }
        Ok(())
    }

    fn row(&self, now: f64, event: EventKind, region: Option<usize>) -> Result<TraceRecord> {
        let m = self.graph.region_count();
        let unified = self.model.is_unified();
        Ok(TraceRecord {
            time: now,
            event,
            region,
            allocation: None,
            decision: None,
            queue_len: self.queue.len(),
            utilization: unified.then_some(self.state.utilization),
            task_effectiveness: None,
            motor_time: None,
            rest: None,
            dp_value: None,
            statistics: self.bank.statistics().to_vec(),
            routing: self.policy.probabilities().to_vec(),
            beliefs: self.state.beliefs.iter().map(|b| b.current).collect(),
            retained: (0..m)
                .map(|k| self.model.working_belief(&self.state, k, now))
                .collect(),
        })
    }

    fn record(&mut self, now: f64, event: EventKind, region: Option<usize>) -> Result<()> {
        let r = self.row(now, event, region)?;
        self.records.push(r);
        Ok(())
    }

    fn finish(self, seed: u64) -> RunOutput {
        let anomaly_detected_at = self
            .anomalies
            .iter()
            .map(|a| match a.2 {
                AnomalyStatus::Removed(t) => Some(t),
                _ => None,
            })
            .collect();
        let duration = self.scenario.run.duration;
        let summary = RunSummary {
            seed,
            tasks_processed: self.tasks_processed,
            false_alarms: self.detections.iter().filter(|d| !d.true_positive).count(),
            detections: self.detections,
            anomaly_detected_at,
            mean_queue_length: self.queue_area / duration,
            max_queue_length: self.max_queue,
        };
        RunOutput {
            trace: Trace {
                travel: self.graph.travel,
                collection: self.graph.collection,
                records: self.records,
            },
            summary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(region: usize, at: f64) -> Task {
        Task {
            region,
            enqueued_at: at,
            anomalous: false,
        }
    }

    #[test]
    fn drop_pending_keeps_the_oldest() {
        let mut q: VecDeque<Task> = (0..5).map(|i| task(i, i as f64)).collect();
        drop_pending(&mut q);
        assert_eq!(q.len(), 1);
        assert_eq!(q[0].enqueued_at, 0.0);
        drop_pending(&mut q);
        assert_eq!(q.len(), 1);
        let mut empty = VecDeque::new();
        drop_pending(&mut empty);
        assert!(empty.is_empty());
    }

    #[test]
    fn decision_sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let acc = 0.97;
        let ones = (0..n)
            .filter(|_| {
                simulate_operator_decision(&mut rng, Hypothesis::Anomalous, acc)
                    == Decision::Anomalous
            })
            .count();
        let sd = (n as f64 * acc * (1.0 - acc)).sqrt();
        assert!((ones as f64 - acc * n as f64).abs() < 3.0 * sd);
    }

    #[test]
    fn coin_flip_ignores_truth() {
        let n = 10_000;
        let sd = (n as f64 * 0.25).sqrt();
        for truth in [Hypothesis::Anomalous, Hypothesis::Nominal] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let ones = (0..n)
                .filter(|_| simulate_operator_decision(&mut rng, truth, 0.5) == Decision::Anomalous)
                .count();
            assert!((ones as f64 - 0.5 * n as f64).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn fixed_stream_fixed_output() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            rng.set_stream(DECISION_STREAM);
            (0..50)
                .map(|_| simulate_operator_decision(&mut rng, Hypothesis::Nominal, 0.7))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }
}
