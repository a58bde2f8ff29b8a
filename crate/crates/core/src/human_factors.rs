//! Exogenous human factors: circadian/fatigue task effectiveness, workload
//! (utilization) dynamics with its sensory-motor delay, memory retention, and
//! the unified accuracy model that folds all of them into the interrogation
//! accuracy of the drift-diffusion operator.
//!
//! Simulation time is in minutes. Fatigue parameters are in hours.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::ddm::{log_odds, logistic, DdmParams, Hypothesis};
use crate::error::{Error, Result};

/// Margin kept above the fatigue-exhaustion singularity when clamping.
pub const EXHAUSTION_MARGIN: f64 = 1e-6;

thread_local! {
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

fn touch() {
    CALLS.with(|c| c.set(c.get() + 1));
}

/// Number of human-factor model evaluations made on the current thread.
///
/// Lets callers assert that a run configured without exogenous factors
/// never reaches this module.
pub fn evaluations_on_this_thread() -> u64 {
    CALLS.with(Cell::get)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafteParams {
    /// R_c, reservoir capacity (units).
    pub reservoir_capacity: f64,
    /// K, reservoir drain rate while awake (units per minute).
    pub drain_rate: f64,
    pub amp1: f64,
    pub amp2: f64,
    /// β, weight of the 12h harmonic.
    pub second_harmonic: f64,
    /// p, hour of the 24h circadian peak.
    pub peak_hour: f64,
    /// p′, offset of the 12h peak (hours).
    pub relative_peak: f64,
}

impl Default for SafteParams {
    fn default() -> Self {
        SafteParams {
            reservoir_capacity: 2880.0,
            drain_rate: 0.5,
            amp1: 7.0,
            amp2: 5.0,
            second_harmonic: 0.5,
            peak_hour: 18.0,
            relative_peak: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotorTerm {
    pub coefficient: f64,
    pub power: u32,
}

/// Workload model: utilization smoothing constant, the optimal/threshold
/// utilization levels, and the sensory-motor time polynomial in utilization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilizationParams {
    /// τ, time constant of the utilization filter.
    pub sensitivity: f64,
    pub optimal: f64,
    pub threshold: f64,
    /// Terms are kept as listed, so repeated powers are allowed.
    pub motor_terms: Vec<MotorTerm>,
}

impl Default for UtilizationParams {
    fn default() -> Self {
        let term = |coefficient, power| MotorTerm { coefficient, power };
        UtilizationParams {
            sensitivity: 100.0,
            optimal: 0.7,
            threshold: 0.85,
            motor_terms: vec![
                term(54.0, 0),
                term(-155.0, 1),
                term(132.0, 2),
                term(-9.0, 0),
            ],
        }
    }
}

impl UtilizationParams {
    /// Raw polynomial value, without the clamp at zero.
    pub fn motor_polynomial(&self, u: f64) -> f64 {
        self.motor_terms
            .iter()
            .map(|t| t.coefficient * u.powi(t.power as i32))
            .sum()
    }

    /// Smallest polynomial value over a fine grid of [0, 1]; negative values
    /// are clamped to zero by [`motor_time`].
    pub fn motor_polynomial_min(&self) -> f64 {
        (0..=1000)
            .map(|i| self.motor_polynomial(i as f64 / 1000.0))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.sensitivity > 0.0) {
            errs.push(format!(
                "operator.utilization.sensitivity must be > 0, got {}",
                self.sensitivity
            ));
        }
        if !(0.0 < self.optimal && self.optimal < self.threshold && self.threshold < 1.0) {
            errs.push(format!(
                "operator.utilization requires 0 < optimal < threshold < 1, got optimal {} threshold {}",
                self.optimal, self.threshold
            ));
        }
        if self.motor_terms.is_empty() {
            errs.push("operator.utilization.motor_terms must not be empty".into());
        }
        errs
    }
}

/// Two-exponential-plus-floor retention curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionParams {
    pub w1: f64,
    pub w2: f64,
    pub floor: f64,
    pub tau1: f64,
    pub tau2: f64,
    /// Multiplier on elapsed time inside both exponentials.
    pub rate_multiplier: f64,
}

impl Default for RetentionParams {
    fn default() -> Self {
        RetentionParams {
            w1: 4.6,
            w2: 1.5,
            floor: 0.1,
            tau1: 1.15,
            tau2: 27.55,
            rate_multiplier: 10.0,
        }
    }
}

impl RetentionParams {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("floor", self.floor),
            ("rate_multiplier", self.rate_multiplier),
        ] {
            if !(v >= 0.0) {
                errs.push(format!("operator.retention.{name} must be >= 0, got {v}"));
            }
        }
        for (name, v) in [("tau1", self.tau1), ("tau2", self.tau2)] {
            if !(v > 0.0) {
                errs.push(format!("operator.retention.{name} must be > 0, got {v}"));
            }
        }
        if !(self.floor > 0.0 || self.w1 + self.w2 > 0.0) {
            errs.push("operator.retention must retain a positive fraction".into());
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SleepSchedule {
    pub wake_hour: f64,
    pub hours_slept: f64,
}

impl Default for SleepSchedule {
    fn default() -> Self {
        SleepSchedule {
            wake_hour: 6.0,
            hours_slept: 6.0,
        }
    }
}

impl SleepSchedule {
    /// (hours awake, time of day in hours) at `minutes` into a mission that
    /// starts at wake-up.
    pub fn clock(&self, minutes: f64) -> (f64, f64) {
        let hours = minutes / 60.0;
        (hours, (self.wake_hour + hours).rem_euclid(24.0))
    }
}

/// Task effectiveness as a fraction (the raw model value divided by 100).
pub fn task_effectiveness(hours_awake: f64, time_of_day: f64, safte: &SafteParams) -> Result<f64> {
    touch();
    if !(hours_awake >= 0.0) {
        return Err(Error::domain(
            "task_effectiveness",
            format!("hours awake must be >= 0, got {hours_awake}"),
        ));
    }
    let depletion = 60.0 * safte.drain_rate * hours_awake / safte.reservoir_capacity;
    let circadian = (2.0 * std::f64::consts::PI / 24.0 * (time_of_day - safte.peak_hour)).cos()
        + safte.second_harmonic
            * (4.0 * std::f64::consts::PI / 24.0
                * (time_of_day - safte.peak_hour - safte.relative_peak))
                .cos();
    let raw = 100.0 * (1.0 - depletion) + (safte.amp1 + safte.amp2 * depletion) * circadian;
    if raw <= 0.0 {
        return Err(Error::FatigueExhaustion {
            te: raw / 100.0,
            floor: 0.0,
        });
    }
    Ok(raw / 100.0)
}

/// `tanh(μ² ξ2 / (4 ξ1 σ²))`: task effectiveness must stay above this.
pub fn fatigue_floor(mu: f64, sigma: f64, xi1: f64, xi2: f64) -> f64 {
    (mu * mu * xi2 / (4.0 * xi1 * sigma * sigma)).tanh()
}

/// Drift rate of a fatigued operator whose mean free-response decision time
/// is the rested one divided by `te`.
pub fn effective_drift(mu: f64, sigma: f64, xi1: f64, xi2: f64, te: f64) -> Result<f64> {
    touch();
    let a = fatigue_floor(mu, sigma, xi1, xi2);
    if !(te > a) {
        return Err(Error::FatigueExhaustion { te, floor: a });
    }
    let value = (2.0 * xi1 * sigma * sigma / xi2 * ((te + a) / (te - a)).ln()).sqrt();
    if !value.is_finite() {
        return Err(Error::FatigueExhaustion { te, floor: a });
    }
    Ok(value)
}

/// [`effective_drift`] with `te` floored just above the singularity.
pub fn effective_drift_clamped(ddm: &DdmParams, te: f64) -> Result<f64> {
    let floor = fatigue_floor(
        ddm.drift_magnitude,
        ddm.diffusion,
        ddm.delay_cost,
        ddm.error_cost,
    );
    let te = if te <= floor + EXHAUSTION_MARGIN {
        log::debug!(
            "task effectiveness {te} clamped to {}",
            floor + EXHAUSTION_MARGIN
        );
        floor + EXHAUSTION_MARGIN
    } else {
        te
    };
    effective_drift(
        ddm.drift_magnitude,
        ddm.diffusion,
        ddm.delay_cost,
        ddm.error_cost,
        te,
    )
}

/// Utilization after `busy` time on a task followed by `idle` time.
pub fn utilization_after_task(u: f64, busy: f64, idle: f64, tau: f64) -> f64 {
    touch();
    let decay_busy = (-busy / tau).exp();
    let decay_idle = (-idle / tau).exp();
    ((1.0 - decay_busy + u * decay_busy) * decay_idle).clamp(0.0, 1.0)
}

/// Sensory-motor time of a fatigued operator at utilization `u`.
pub fn motor_time(u: f64, te: f64, params: &UtilizationParams) -> f64 {
    touch();
    params.motor_polynomial(u).max(0.0) / te
}

/// Idle time that brings utilization back to the optimum once it exceeds
/// the threshold; zero otherwise.
pub fn rest_time(u: f64, params: &UtilizationParams) -> f64 {
    touch();
    if u > params.threshold {
        params.sensitivity * (u / params.optimal).ln()
    } else {
        0.0
    }
}

/// Fraction of acquired belief (in log-odds) retained after `elapsed`.
pub fn retention(elapsed: f64, params: &RetentionParams) -> f64 {
    touch();
    let k = params.rate_multiplier * elapsed.max(0.0);
    let raw =
        params.w1 * (-k / params.tau1).exp() + params.w2 * (-k / params.tau2).exp() + params.floor;
    raw.min(1.0)
}

/// Belief left after forgetting: the log-odds of `pi_last` scaled by the
/// retention fraction.
pub fn retained_belief(pi_last: f64, elapsed: f64, params: &RetentionParams) -> f64 {
    let rem = retention(elapsed, params);
    logistic(log_odds(pi_last) * rem)
}

/// Operator conditions frozen for the duration of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskConditions {
    pub utilization: f64,
    pub task_effectiveness: f64,
    /// Time since the region was last processed; `None` if never.
    pub elapsed_since_last: Option<f64>,
    /// Belief right after the region was last processed.
    pub belief_at_last: f64,
}

/// Derived quantities shared by every accuracy evaluation for one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnifiedTerms {
    pub effective_drift: f64,
    pub wait: f64,
    pub initial_evidence: f64,
}

/// Effective drift, sensory-motor wait and forgetting-adjusted initial
/// evidence for a task under `cond`.
pub fn unified_terms(
    cond: &TaskConditions,
    ddm: &DdmParams,
    uparams: &UtilizationParams,
    rparams: &RetentionParams,
) -> Result<UnifiedTerms> {
    let mu_eff = effective_drift_clamped(ddm, cond.task_effectiveness)?;
    let wait = motor_time(cond.utilization, cond.task_effectiveness, uparams);
    let initial_evidence = match cond.elapsed_since_last {
        Some(elapsed) if cond.belief_at_last != 0.5 => {
            ddm.diffusion * ddm.diffusion * log_odds(cond.belief_at_last) / (2.0 * mu_eff)
                * retention(elapsed, rparams)
        }
        _ => 0.0,
    };
    Ok(UnifiedTerms {
        effective_drift: mu_eff,
        wait,
        initial_evidence,
    })
}

/// Accuracy on `hypothesis` after allocating `t`, with no evidence gathered
/// during the sensory-motor wait.
pub fn unified_accuracy_from_terms(
    hypothesis: Hypothesis,
    t: f64,
    terms: &UnifiedTerms,
    ddm: &DdmParams,
) -> f64 {
    let effective = (t - terms.wait).max(0.0);
    hypothesis.accuracy(
        effective,
        terms.initial_evidence,
        terms.effective_drift,
        ddm.diffusion,
        ddm.interrogation_threshold,
    )
}

pub fn unified_accuracy(
    hypothesis: Hypothesis,
    t: f64,
    cond: &TaskConditions,
    ddm: &DdmParams,
    uparams: &UtilizationParams,
    rparams: &RetentionParams,
) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(
            "unified_accuracy",
            format!("duration must be >= 0, got {t}"),
        ));
    }
    let terms = unified_terms(cond, ddm, uparams, rparams)?;
    Ok(unified_accuracy_from_terms(hypothesis, t, &terms, ddm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddm::{accuracy_h1, std_normal_cdf};

    fn ddm() -> DdmParams {
        DdmParams::new(0.3, 1.0).unwrap().with_costs(1.0, 40.0)
    }

    #[test]
    fn task_effectiveness_examples() {
        let s = SafteParams::default();
        assert!((task_effectiveness(0.0, 18.0, &s).unwrap() - 1.07).abs() < 1e-12);

        let flat = SafteParams {
            amp1: 0.0,
            amp2: 0.0,
            second_harmonic: 0.0,
            ..s
        };
        assert!((task_effectiveness(0.0, 3.0, &flat).unwrap() - 1.0).abs() < 1e-15);

        let no_drain = SafteParams {
            drain_rate: 0.0,
            ..s
        };
        let a = task_effectiveness(0.0, 10.0, &no_drain).unwrap();
        let b = task_effectiveness(20.0, 10.0, &no_drain).unwrap();
        assert_eq!(a, b);

        // 06:00 right after waking: 100 + 7·cos(-π) = 93
        assert!((task_effectiveness(0.0, 6.0, &s).unwrap() - 0.93).abs() < 1e-12);
        // numpy evaluation of the raw formula at T_a = 4, T_d = 10
        assert!(
            (task_effectiveness(4.0, 10.0, &s).unwrap() - 0.953_504_665_594_730_8).abs() < 1e-12
        );
    }

    #[test]
    fn task_effectiveness_exhaustion() {
        let s = SafteParams::default();
        assert!(matches!(
            task_effectiveness(200.0, 6.0, &s),
            Err(Error::FatigueExhaustion { .. })
        ));
    }

    fn modified_drift_residual(mu_eff: f64, te: f64) -> f64 {
        let (mu, sigma, xi1, xi2) = (0.3, 1.0, 1.0, 40.0);
        let eta = mu * xi2 / (4.0 * xi1);
        (mu_eff * mu_eff * xi2 / (4.0 * xi1 * sigma * sigma)).tanh()
            - (mu * eta / (sigma * sigma)).tanh() / te
    }

    #[test]
    fn effective_drift_examples() {
        let at_one = effective_drift(0.3, 1.0, 1.0, 40.0, 1.0).unwrap();
        assert!((at_one - 0.3).abs() < 1e-10);
        assert!(modified_drift_residual(at_one, 1.0).abs() < 1e-10);

        // A more effective operator needs less drift to match a shorter
        // Bayes-optimal decision time.
        let rested = effective_drift(0.3, 1.0, 1.0, 40.0, 1.07).unwrap();
        assert!(modified_drift_residual(rested, 1.07).abs() < 1e-10);
        assert!((rested - 0.284_556_269_520_938).abs() < 1e-12);
        assert!(rested < 0.3);

        let tired = effective_drift(0.3, 1.0, 1.0, 40.0, 0.93).unwrap();
        assert!(modified_drift_residual(tired, 0.93).abs() < 1e-10);
        assert!(tired > 0.3);

        let floor = fatigue_floor(0.3, 1.0, 1.0, 40.0);
        assert!(matches!(
            effective_drift(0.3, 1.0, 1.0, 40.0, floor),
            Err(Error::FatigueExhaustion { .. })
        ));
        let near = effective_drift(0.3, 1.0, 1.0, 40.0, floor + 1e-9).unwrap();
        assert!(near > 1.0);
        assert!(effective_drift_clamped(&ddm(), floor * 0.5)
            .unwrap()
            .is_finite());
    }

    #[test]
    fn utilization_examples() {
        assert_eq!(utilization_after_task(0.7, 0.0, 0.0, 100.0), 0.7);
        assert!(
            (utilization_after_task(0.0, 100.0, 0.0, 100.0) - 0.632_120_558_828_557_7).abs()
                < 1e-15
        );
        assert_eq!(utilization_after_task(0.9, 0.0, 1e6, 100.0), 0.0);
        let mut u = 0.1;
        for _ in 0..2000 {
            u = utilization_after_task(u, 10.0, 0.0, 100.0);
        }
        assert!((u - 1.0).abs() < 1e-12);
    }

    #[test]
    fn motor_time_examples() {
        let p = UtilizationParams::default();
        assert!((motor_time(0.0, 1.0, &p) - 45.0).abs() < 1e-12);
        // The printed quadratic dips below zero around its vertex; clamped.
        assert!((p.motor_polynomial(0.587) + 0.501_892).abs() < 1e-9);
        assert_eq!(motor_time(0.587, 1.0, &p), 0.0);
        assert!(p.motor_polynomial_min() < 0.0);
        for &u in &[0.0, 0.3, 0.7, 1.0] {
            assert!((motor_time(u, 2.0, &p) - 0.5 * motor_time(u, 1.0, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn rest_time_examples() {
        let p = UtilizationParams::default();
        let d = rest_time(0.850_000_000_1, &p);
        assert!((d - 19.415_601_444_095_756).abs() < 1e-6);
        assert_eq!(rest_time(0.85, &p), 0.0);
        let d = rest_time(0.9, &p);
        assert!((utilization_after_task(0.9, 0.0, d, 100.0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn retention_examples() {
        let r = RetentionParams::default();
        assert_eq!(retention(0.0, &r), 1.0);
        assert!((retention(1e6, &r) - 0.1).abs() < 1e-15);
        // raw value 1.1441739..., clamped
        assert_eq!(retention(1.0, &r), 1.0);
        assert!((retention(5.0, &r) - 0.344_285_678_615_369_2).abs() < 1e-12);
    }

    #[test]
    fn retained_belief_examples() {
        let r = RetentionParams::default();
        assert_eq!(retained_belief(0.5, 3.0, &r), 0.5);
        assert!((retained_belief(0.8, 0.0, &r) - 0.8).abs() < 1e-15);
        let long = 1e6;
        assert!((retention(long, &r) - 0.1).abs() < 1e-15);
        assert!((retained_belief(0.8, long, &r) - 0.534_601_961_380_763_5).abs() < 1e-12);
    }

    #[test]
    fn unified_accuracy_no_evidence_is_half() {
        let cond = TaskConditions {
            utilization: 0.0,
            task_effectiveness: 1.0,
            elapsed_since_last: None,
            belief_at_last: 0.5,
        };
        let u = UtilizationParams::default();
        let r = RetentionParams::default();
        // wait is 45 at u = 0
        let a = unified_accuracy(Hypothesis::Anomalous, 30.0, &cond, &ddm(), &u, &r).unwrap();
        assert_eq!(a, 0.5);
    }

    #[test]
    fn unified_accuracy_reduces_to_plain_ddm() {
        let cond = TaskConditions {
            utilization: 0.7,
            task_effectiveness: 1.0,
            elapsed_since_last: None,
            belief_at_last: 0.5,
        };
        let u = UtilizationParams::default();
        let r = RetentionParams::default();
        let wait = u.motor_polynomial(0.7);
        let t = 25.0;
        let a = unified_accuracy(Hypothesis::Nominal, t, &cond, &ddm(), &u, &r).unwrap();
        let plain = accuracy_h1(t - wait, 0.0, &ddm()).unwrap();
        assert!((a - plain).abs() < 1e-10);
    }

    #[test]
    fn unified_accuracy_composition() {
        // Chained by hand from the sub-formulas (numpy/scipy).
        let cond = TaskConditions {
            utilization: 0.7,
            task_effectiveness: 1.07,
            elapsed_since_last: Some(5.0),
            belief_at_last: 0.6,
        };
        let u = UtilizationParams::default();
        let r = RetentionParams::default();
        let a = unified_accuracy(Hypothesis::Anomalous, 40.0, &cond, &ddm(), &u, &r).unwrap();
        let n = unified_accuracy(Hypothesis::Nominal, 40.0, &cond, &ddm(), &u, &r).unwrap();
        assert!((a - 0.965_164_126_863_707).abs() < 1e-12);
        assert!((n - 0.958_663_278_418_435_7).abs() < 1e-12);

        let terms = unified_terms(&cond, &ddm(), &u, &r).unwrap();
        let tau = 40.0 - terms.wait;
        let direct =
            std_normal_cdf((terms.effective_drift * tau + terms.initial_evidence) / tau.sqrt());
        assert!((a - direct).abs() < 1e-15);
    }

    #[test]
    fn unified_accuracy_continuous_at_wait() {
        let cond = TaskConditions {
            utilization: 0.2,
            task_effectiveness: 1.0,
            elapsed_since_last: Some(0.5),
            belief_at_last: 0.5,
        };
        let u = UtilizationParams::default();
        let r = RetentionParams::default();
        let wait = unified_terms(&cond, &ddm(), &u, &r).unwrap().wait;
        let at = unified_accuracy(Hypothesis::Anomalous, wait, &cond, &ddm(), &u, &r).unwrap();
        let after =
            unified_accuracy(Hypothesis::Anomalous, wait + 1e-10, &cond, &ddm(), &u, &r).unwrap();
        assert!((at - after).abs() < 1e-4);
    }

    #[test]
    fn counter_tracks_calls() {
        let before = evaluations_on_this_thread();
        let _ = retention(1.0, &RetentionParams::default());
        assert!(evaluations_on_this_thread() > before);
    }
}
