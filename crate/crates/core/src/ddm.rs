//! Drift-diffusion decision accuracy.
//!
//! Evidence follows `dx = ±μ dt + σ dW` from an initial value `x0`. Under the
//! interrogation paradigm the operator is stopped after a fixed duration `t`
//! and answers by comparing `x(t)` with the threshold `ν`. Under the free
//! response paradigm the operator answers when `x` first leaves `(-η, η)`.
//!
//! Sign convention used throughout the crate: the *anomalous* hypothesis is
//! the positive-drift alternative and is chosen when evidence ends above `ν`.
//! [`accuracy_h0`] is the accuracy when that positive-drift alternative is
//! true, [`accuracy_h1`] the accuracy for the negative-drift alternative.
//! [`Hypothesis::accuracy`] maps the two onto anomalous/nominal.

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

/// Ground-truth state of a region, or the hypothesis an accuracy refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Anomalous,
    Nominal,
}

impl Hypothesis {
    /// Probability of a correct answer after `t` units of evidence starting at
    /// `x0`, with drift magnitude `drift`.
    ///
    /// `t = 0` returns the no-evidence limit: the answer is fixed by the sign
    /// of `x0 - ν` (0.5 when they coincide).
    pub fn accuracy(self, t: f64, x0: f64, drift: f64, diffusion: f64, threshold: f64) -> f64 {
        if t <= 0.0 {
            let lean = x0 - threshold;
            let toward_anomalous = if lean > 0.0 {
                1.0
            } else if lean < 0.0 {
                0.0
            } else {
                0.5
            };
            return match self {
                Hypothesis::Anomalous => toward_anomalous,
                Hypothesis::Nominal => 1.0 - toward_anomalous,
            };
        }
        let scale = diffusion * t.sqrt();
        match self {
            // 1 - Φ((ν - μt - x0)/(σ√t)) == Φ((μt + x0 - ν)/(σ√t))
            Hypothesis::Anomalous => std_normal_cdf((drift * t + x0 - threshold) / scale),
            Hypothesis::Nominal => std_normal_cdf((threshold + drift * t - x0) / scale),
        }
    }

    /// The decision label an operator gives when answering this hypothesis.
    pub fn label(self) -> Decision {
        match self {
            Hypothesis::Anomalous => Decision::Anomalous,
            Hypothesis::Nominal => Decision::Nominal,
        }
    }
}

/// A binary operator decision; `1` means "anomalous".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Nominal,
    Anomalous,
}

impl Decision {
    pub fn as_u8(self) -> u8 {
        match self {
            Decision::Nominal => 0,
            Decision::Anomalous => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Decision::Nominal),
            1 => Some(Decision::Anomalous),
            _ => None,
        }
    }
}

/// Parameters of one operator decision model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdmParams {
    /// μ, evidence per unit time.
    pub drift_magnitude: f64,
    /// σ, evidence per sqrt(unit time).
    pub diffusion: f64,
    /// ν, the interrogation threshold.
    #[serde(default)]
    pub interrogation_threshold: f64,
    /// η, the symmetric free-response threshold.
    #[serde(default)]
    pub free_response_threshold: f64,
    /// ξ1, cost per unit decision delay.
    pub delay_cost: f64,
    /// ξ2, cost per error.
    pub error_cost: f64,
}

impl DdmParams {
    /// Unbiased interrogation model with unit costs and zero thresholds.
    pub fn new(drift_magnitude: f64, diffusion: f64) -> Result<Self> {
        let p = DdmParams {
            drift_magnitude,
            diffusion,
            interrogation_threshold: 0.0,
            free_response_threshold: 0.0,
            delay_cost: 1.0,
            error_cost: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_costs(mut self, delay_cost: f64, error_cost: f64) -> Self {
        self.delay_cost = delay_cost;
        self.error_cost = error_cost;
        self
    }

    pub fn with_free_response_threshold(mut self, eta: f64) -> Self {
        self.free_response_threshold = eta;
        self
    }

    pub fn with_interrogation_threshold(mut self, nu: f64) -> Self {
        self.interrogation_threshold = nu;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.drift_magnitude > 0.0 && self.drift_magnitude.is_finite()) {
            return Err(Error::domain(
                "DdmParams",
                format!("drift_magnitude must be > 0, got {}", self.drift_magnitude),
            ));
        }
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(Error::domain(
                "DdmParams",
                format!("diffusion must be > 0, got {}", self.diffusion),
            ));
        }
        if !(self.free_response_threshold >= 0.0) {
            return Err(Error::domain(
                "DdmParams",
                format!(
                    "free_response_threshold must be >= 0, got {}",
                    self.free_response_threshold
                ),
            ));
        }
        Ok(())
    }

    /// ξ2/ξ1.
    pub fn cost_ratio(&self) -> f64 {
        self.error_cost / self.delay_cost
    }
}

/// Standard normal CDF via `erfc`, accurate to well below 1e-12 absolute.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// log(p / (1 - p)).
pub fn log_odds(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// 1 / (1 + e^{-x}), evaluated without overflow.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Initial evidence encoding the prior odds of the positive-drift
/// alternative: `x0 = σ² log(π/(1-π)) / (2μ)`.
pub fn initial_evidence(prior: f64, params: &DdmParams) -> Result<f64> {
    if !(prior > 0.0 && prior < 1.0) {
        return Err(Error::domain(
            "initial_evidence",
            format!("prior must lie in (0,1), got {prior}"),
        ));
    }
    let sigma2 = params.diffusion * params.diffusion;
    Ok(sigma2 * log_odds(prior) / (2.0 * params.drift_magnitude))
}

fn check_duration(op: &'static str, t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(op, format!("duration must be > 0, got {t}")))
    }
}

/// `f⁰(t) = 1 - Φ((ν - μt - x0)/(σ√t))`.
pub fn accuracy_h0(t: f64, x0: f64, params: &DdmParams) -> Result<f64> {
    check_duration("accuracy_h0", t)?;
    Ok(Hypothesis::Anomalous.accuracy(
        t,
        x0,
        params.drift_magnitude,
        params.diffusion,
        params.interrogation_threshold,
    ))
}

/// `f¹(t) = Φ((ν + μt - x0)/(σ√t))`.
pub fn accuracy_h1(t: f64, x0: f64, params: &DdmParams) -> Result<f64> {
    check_duration("accuracy_h1", t)?;
    Ok(Hypothesis::Nominal.accuracy(
        t,
        x0,
        params.drift_magnitude,
        params.diffusion,
        params.interrogation_threshold,
    ))
}

/// Mixture of the two conditional accuracies, each weighted by the
/// probability of its own hypothesis.
pub fn expected_accuracy(weight_h0: f64, f0: f64, f1: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&weight_h0));
    weight_h0 * f0 + (1.0 - weight_h0) * f1
}

/// Mean decision time under the free-response paradigm with thresholds ±η.
pub fn free_response_expected_time(x0: f64, params: &DdmParams) -> Result<f64> {
    let eta = params.free_response_threshold;
    let mu = params.drift_magnitude;
    let sigma2 = params.diffusion * params.diffusion;
    if eta == 0.0 && x0 == 0.0 {
        return Ok(0.0);
    }
    if x0.abs() >= eta {
        return Err(Error::domain(
            "free_response_expected_time",
            format!("|x0| = {} is not inside the thresholds ±{eta}", x0.abs()),
        ));
    }
    let a = 2.0 * eta * mu / sigma2;
    let first = (eta / mu) * (mu * eta / sigma2).tanh();
    let second =
        2.0 * eta * (1.0 - (-2.0 * x0 * mu / sigma2).exp()) / (mu * (a.exp() - (-a).exp()));
    Ok(first + second - x0 / mu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    /// Root of the full transcendental equation.
    Exact,
    /// Small-drift limit `η = μ ξ2 / (4 ξ1)`.
    Limiting,
}

/// Left-hand side of the Bayes-risk optimality condition for the
/// free-response threshold; zero at the optimum.
pub fn bayes_risk_residual(eta: f64, params: &DdmParams) -> f64 {
    let mu = params.drift_magnitude;
    let sigma2 = params.diffusion * params.diffusion;
    let b = 2.0 * mu * eta / sigma2;
    params.cost_ratio() * 2.0 * mu * mu / sigma2 - 4.0 * mu * eta / sigma2 + (-b).exp() - b.exp()
}

/// Free-response threshold minimizing the Bayes risk `ξ1·T + ξ2·P(error)`.
pub fn bayes_risk_threshold(params: &DdmParams, mode: ThresholdMode) -> Result<f64> {
    if !(params.delay_cost > 0.0 && params.error_cost > 0.0) {
        return Err(Error::domain(
            "bayes_risk_threshold",
            format!(
                "costs must be positive, got delay {} error {}",
                params.delay_cost, params.error_cost
            ),
        ));
    }
    let limiting = params.drift_magnitude * params.cost_ratio() / 4.0;
    if mode == ThresholdMode::Limiting {
        return Ok(limiting);
    }

    let (mut lo, mut hi) = (0.0, limiting);
    let (g_lo, g_hi) = (
        bayes_risk_residual(lo, params),
        bayes_risk_residual(hi, params),
    );
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::numerical(
            "bayes_risk_threshold",
            format!("root not bracketed on [0, {limiting}]: g(0)={g_lo}, g(hi)={g_hi}"),
        ));
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let g_mid = bayes_risk_residual(mid, params);
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < BISECTION_TOL {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
