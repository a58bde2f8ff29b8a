//! Operator beliefs about each region and how decisions update them.

use serde::{Deserialize, Serialize};

use crate::ddm::{initial_evidence, DdmParams, Decision, Hypothesis};
use crate::error::{Error, Result};
use crate::human_factors::{
    self, RetentionParams, SafteParams, SleepSchedule, TaskConditions, UnifiedTerms,
    UtilizationParams,
};

/// Lowest belief an operator holds about any region being anomalous.
pub const BELIEF_FLOOR: f64 = 0.5;
/// Beliefs are capped here so their log-odds stay finite.
pub const BELIEF_CAP: f64 = 1.0 - 1e-9;

/// Posterior probability that the processed region is anomalous.
pub fn bayes_update(prior: f64, p_dec_given_h1: f64, p_dec_given_h0: f64) -> Result<f64> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::domain(
            "bayes_update",
            format!("prior must lie in (0,1), got {prior}"),
        ));
    }
    let num = prior * p_dec_given_h1;
    let den = (1.0 - prior) * p_dec_given_h0 + num;
    if !(den > 0.0) {
        return Err(Error::DegenerateLikelihood {
            decision: u8::MAX,
            p1: p_dec_given_h1,
            p0: p_dec_given_h0,
        });
    }
    Ok(num / den)
}

pub fn reset_floor(pi: f64) -> f64 {
    pi.max(BELIEF_FLOOR)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBelief {
    pub current: f64,
    pub last_processed_at: Option<f64>,
    pub belief_at_last: f64,
}

impl Default for RegionBelief {
    fn default() -> Self {
        RegionBelief {
            current: BELIEF_FLOOR,
            last_processed_at: None,
            belief_at_last: BELIEF_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorState {
    pub utilization: f64,
    pub beliefs: Vec<RegionBelief>,
    /// Minutes since the mission (and the operator's wake period) started.
    pub clock_awake: f64,
    /// Hour of the day, in [0, 24).
    pub time_of_day: f64,
}

impl OperatorState {
    pub fn new(regions: usize, utilization: f64, wake_hour: f64) -> Self {
        OperatorState {
            utilization,
            beliefs: vec![RegionBelief::default(); regions],
            clock_awake: 0.0,
            time_of_day: wake_hour,
        }
    }

    /// Clears a region's belief once its anomaly has been declared and removed.
    pub fn reset_after_detection(&mut self, region: usize) {
        let b = &mut self.beliefs[region];
        b.current = BELIEF_FLOOR;
        b.belief_at_last = BELIEF_FLOOR;
    }
}

/// Full human-factor parameter set for the unified operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanFactors {
    pub utilization: UtilizationParams,
    pub retention: RetentionParams,
    pub safte: SafteParams,
    pub sleep: SleepSchedule,
}

/// Which accuracy model drives the operator.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorModel {
    /// Interrogation DDM whose initial evidence is the current belief.
    Simple(DdmParams),
    /// DDM with fatigue, utilization-dependent wait and memory retention.
    Unified {
        ddm: DdmParams,
        factors: HumanFactors,
    },
}

/// Everything needed to evaluate accuracies of one task, frozen at its start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenTask {
    /// Prior belief the Bayes update starts from.
    pub prior: f64,
    pub evidence: FrozenEvidence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrozenEvidence {
    Simple {
        x0: f64,
    },
    Unified {
        terms: UnifiedTerms,
        conditions: TaskConditions,
    },
}

/// P(dec=1 | anomalous) and P(dec=0 | nominal) at the allocated duration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Likelihoods {
    pub f1: f64,
    pub f0: f64,
}

impl OperatorModel {
    pub fn ddm(&self) -> &DdmParams {
        match self {
            OperatorModel::Simple(d) => d,
            OperatorModel::Unified { ddm, .. } => ddm,
        }
    }

    pub fn is_unified(&self) -> bool {
        matches!(self, OperatorModel::Unified { .. })
    }

    /// Belief the operator holds about `region` at time `now`, after
    /// forgetting when the model includes memory.
    pub fn working_belief(&self, state: &OperatorState, region: usize, now: f64) -> f64 {
        let b = &state.beliefs[region];
        match self {
            OperatorModel::Simple(_) => b.current,
            OperatorModel::Unified { factors, .. } => match b.last_processed_at {
                Some(at) if b.belief_at_last != BELIEF_FLOOR => {
                    human_factors::retained_belief(b.belief_at_last, now - at, &factors.retention)
                }
                _ => b.belief_at_last,
            },
        }
    }

    /// Task effectiveness at `now` (always 1 for the simple model).
    pub fn task_effectiveness(&self, now: f64) -> Result<f64> {
        match self {
            OperatorModel::Simple(_) => Ok(1.0),
            OperatorModel::Unified { factors, .. } => {
                let (awake, tod) = factors.sleep.clock(now);
                human_factors::task_effectiveness(awake, tod, &factors.safte)
            }
        }
    }

    /// Freezes the accuracy model of a task from `region` starting at `now`.
    pub fn freeze(&self, state: &OperatorState, region: usize, now: f64) -> Result<FrozenTask> {
        let prior = self.working_belief(state, region, now);
        match self {
            OperatorModel::Simple(ddm) => Ok(FrozenTask {
                prior,
                evidence: FrozenEvidence::Simple {
                    x0: initial_evidence(prior, ddm)?,
                },
            }),
            OperatorModel::Unified { ddm, factors } => {
                let b = &state.beliefs[region];
                let conditions = TaskConditions {
                    utilization: state.utilization,
                    task_effectiveness: self.task_effectiveness(now)?,
                    elapsed_since_last: b.last_processed_at.map(|at| (now - at).max(0.0)),
                    belief_at_last: b.belief_at_last,
                };
                let terms = human_factors::unified_terms(
                    &conditions,
                    ddm,
                    &factors.utilization,
                    &factors.retention,
                )?;
                Ok(FrozenTask {
                    prior,
                    evidence: FrozenEvidence::Unified { terms, conditions },
                })
            }
        }
    }

    /// Accuracy on `hypothesis` after allocating `t` to a frozen task.
    pub fn accuracy(&self, hypothesis: Hypothesis, t: f64, task: &FrozenTask) -> f64 {
        let ddm = self.ddm();
        match task.evidence {
            FrozenEvidence::Simple { x0 } => hypothesis.accuracy(
                t,
                x0,
                ddm.drift_magnitude,
                ddm.diffusion,
                ddm.interrogation_threshold,
            ),
            FrozenEvidence::Unified { terms, .. } => {
                human_factors::unified_accuracy_from_terms(hypothesis, t, &terms, ddm)
            }
        }
    }

    /// Belief-weighted accuracy: the task's performance function.
    pub fn performance(&self, t: f64, task: &FrozenTask) -> f64 {
        task.prior * self.accuracy(Hypothesis::Anomalous, t, task)
            + (1.0 - task.prior) * self.accuracy(Hypothesis::Nominal, t, task)
    }

    pub fn likelihoods(&self, t: f64, task: &FrozenTask) -> Likelihoods {
        Likelihoods {
            f1: self.accuracy(Hypothesis::Anomalous, t, task),
            f0: self.accuracy(Hypothesis::Nominal, t, task),
        }
    }

    /// Utilization decay over an idle stretch.
    pub fn idle(&self, state: &mut OperatorState, duration: f64) {
        if let OperatorModel::Unified { factors, .. } = self {
            if duration > 0.0 {
                state.utilization = human_factors::utilization_after_task(
                    state.utilization,
                    0.0,
                    duration,
                    factors.utilization.sensitivity,
                );
            }
        }
    }

    /// Applies one processed decision to `state`.
    ///
    /// `task` must have been frozen at `now - allocation`. Only the processed
    /// region's belief changes; zero allocations leave beliefs untouched.
    /// Returns the likelihoods used, or `None` for a zero allocation.
    pub fn process_decision(
        &self,
        state: &mut OperatorState,
        region: usize,
        allocation: f64,
        decision: Decision,
        now: f64,
        task: &FrozenTask,
    ) -> Result<Option<Likelihoods>> {
        if !(allocation >= 0.0) {
            return Err(Error::domain(
                "process_decision",
                format!("allocation must be >= 0, got {allocation}"),
            ));
        }
        self.set_clock(state, now);
        if allocation == 0.0 {
            return Ok(None);
        }
        let lk = self.likelihoods(allocation, task);
        let (p1, p0) = match decision {
            Decision::Anomalous => (lk.f1, 1.0 - lk.f0),
            Decision::Nominal => (1.0 - lk.f1, lk.f0),
        };
        let posterior = bayes_update(task.prior, p1, p0).map_err(|e| match e {
            Error::DegenerateLikelihood { p1, p0, .. } => Error::DegenerateLikelihood {
                decision: decision.as_u8(),
                p1,
                p0,
            },
            other => other,
        })?;
        let belief = reset_floor(posterior).min(BELIEF_CAP);

        if let OperatorModel::Unified { factors, .. } = self {
            state.utilization = human_factors::utilization_after_task(
                state.utilization,
                allocation,
                0.0,
                factors.utilization.sensitivity,
            );
        }
        let b = &mut state.beliefs[region];
        b.current = belief;
        b.belief_at_last = belief;
        b.last_processed_at = Some(now);
        Ok(Some(lk))
    }

    fn set_clock(&self, state: &mut OperatorState, now: f64) {
        state.clock_awake = now;
        state.time_of_day = match self {
            OperatorModel::Simple(_) => state.time_of_day,
            OperatorModel::Unified { factors, .. } => factors.sleep.clock(now).1,
        };
    }
}
