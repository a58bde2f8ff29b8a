//! Ensemble CUSUM over regions, driven by the operator's binary decisions.
//!
//! Each decision is scored against likelihoods conditioned on the belief and
//! allocation in force when the task was processed, which is what makes the
//! statistic usable on dependent observations.

use serde::{Deserialize, Serialize};

use crate::ddm::Decision;
use crate::error::{Error, Result};

/// Smallest likelihood admitted inside the logarithm.
pub const LIKELIHOOD_FLOOR: f64 = 1e-12;

/// Log-likelihood ratio of one decision given `f1 = P(dec=1 | anomalous)`
/// and `f0 = P(dec=0 | nominal)`.
pub fn loglik_ratio(decision: Decision, f1: f64, f0: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f1) || !(0.0..=1.0).contains(&f0) {
        return Err(Error::domain(
            "loglik_ratio",
            format!("likelihoods must lie in [0,1], got f1={f1} f0={f0}"),
        ));
    }
    let (num, den) = match decision {
        Decision::Anomalous => (f1, 1.0 - f0),
        Decision::Nominal => (1.0 - f1, f0),
    };
    if num <= 0.0 && den <= 0.0 {
        return Err(Error::DegenerateLikelihood {
            decision: decision.as_u8(),
            p1: num,
            p0: den,
        });
    }
    if num < LIKELIHOOD_FLOOR || den < LIKELIHOOD_FLOOR {
        log::warn!("likelihood floored in CUSUM increment: num={num} den={den}");
    }
    Ok(num.max(LIKELIHOOD_FLOOR).ln() - den.max(LIKELIHOOD_FLOOR).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumBank {
    statistics: Vec<f64>,
    threshold: f64,
}

impl CusumBank {
    pub fn new(regions: usize, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::domain(
                "CusumBank",
                format!("threshold must be > 0, got {threshold}"),
            ));
        }
        Ok(CusumBank {
            statistics: vec![0.0; regions],
            threshold,
        })
    }

    pub fn statistics(&self) -> &[f64] {
        &self.statistics
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn len(&self) -> usize {
        self.statistics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statistics.is_empty()
    }

    /// `Λ := max(0, Λ + increment)`; returns true and resets `Λ` to zero when
    /// the threshold is reached.
    pub fn update(&mut self, region: usize, increment: f64) -> bool {
        let s = &mut self.statistics[region];
        *s = (*s + increment).max(0.0);
        if *s >= self.threshold {
            *s = 0.0;
            true
        } else {
            false
        }
    }

    /// One step of the ensemble algorithm for a processed task. Tasks given
    /// no time carry no evidence and leave the bank untouched (`None`).
    pub fn observe(
        &mut self,
        region: usize,
        allocation: f64,
        decision: Decision,
        f1: f64,
        f0: f64,
    ) -> Result<Option<bool>> {
        if allocation <= 0.0 {
            return Ok(None);
        }
        let inc = loglik_ratio(decision, f1, f0)?;
        Ok(Some(self.update(region, inc)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglik_examples() {
        let up = loglik_ratio(Decision::Anomalous, 0.8, 0.8).unwrap();
        assert!((up - 4f64.ln()).abs() < 1e-15);
        let down = loglik_ratio(Decision::Nominal, 0.8, 0.8).unwrap();
        assert!((down + 4f64.ln()).abs() < 1e-15);
        for d in [Decision::Anomalous, Decision::Nominal] {
            assert!(loglik_ratio(d, 0.3, 0.7).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn loglik_floors_degenerate_side() {
        let v = loglik_ratio(Decision::Anomalous, 1.0, 1.0).unwrap();
        assert!((v - (-(LIKELIHOOD_FLOOR.ln()))).abs() < 1e-9);
        assert!(loglik_ratio(Decision::Anomalous, 1.5, 0.5).is_err());
    }

    #[test]
    fn update_examples() {
        let mut b = CusumBank::new(4, 5.0).unwrap();
        assert!(!b.update(0, -5.0));
        assert_eq!(b.statistics()[0], 0.0);

        b.statistics[1] = 4.0;
        assert!(b.update(1, 1.4));
        assert_eq!(b.statistics()[1], 0.0);

        b.statistics[2] = 1.0;
        assert!(!b.update(2, 1.3863));
        assert!((b.statistics()[2] - 2.3863).abs() < 1e-15);
        assert_eq!(b.statistics()[3], 0.0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut b = CusumBank::new(1, 5.0).unwrap();
        assert!(b.update(0, 5.0));
    }

    #[test]
    fn zero_allocation_is_ignored() {
        let mut b = CusumBank::new(2, 5.0).unwrap();
        assert_eq!(
            b.observe(0, 0.0, Decision::Anomalous, 0.9, 0.9).unwrap(),
            None
        );
        assert_eq!(b.statistics(), &[0.0, 0.0]);
        assert_eq!(
            b.observe(0, 1.0, Decision::Anomalous, 0.9, 0.9).unwrap(),
            Some(false)
        );
        assert!(b.statistics()[0] > 0.0);
    }

    #[test]
    fn rejects_nonpositive_threshold() {
        assert!(CusumBank::new(2, 0.0).is_err());
    }
}
