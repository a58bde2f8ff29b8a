//! Scenario files (TOML): the surveillance graph, operator model, algorithm
//! settings, run settings and anomaly schedule.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ddm::DdmParams;
use crate::decision_support::Grids;
use crate::error::{Error, Result};
use crate::human_factors::{RetentionParams, SafteParams, SleepSchedule, UtilizationParams};
use crate::operator::{HumanFactors, OperatorModel};
use crate::routing::SurveillanceGraph;

/// The two case-study scenarios shipped in `scenarios/`.
pub mod bundled {
    /// Four regions, operator without fatigue or workload effects.
    pub const CASE1: &str = include_str!("../../../scenarios/case1.toml");
    /// Same mission with utilization, fatigue and memory retention.
    pub const CASE2: &str = include_str!("../../../scenarios/case2.toml");
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub graph: GraphSection,
    pub regions: RegionsSection,
    pub operator: OperatorSection,
    pub algorithm: AlgorithmSection,
    pub run: RunSection,
    #[serde(default)]
    pub anomalies: Vec<Anomaly>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub travel: Vec<Vec<f64>>,
    pub collection: Vec<f64>,
    /// Defaults to the complete graph with self-loops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<bool>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionsSection {
    pub weights: Vec<f64>,
    pub deadlines: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSection {
    pub drift: f64,
    pub diffusion: f64,
    #[serde(default)]
    pub interrogation_threshold: f64,
    /// ξ1, cost per unit decision time.
    pub delay_cost: f64,
    /// ξ2, cost of an error.
    pub error_cost: f64,
    /// Utilization when the mission starts.
    pub initial_utilization: f64,
    #[serde(default)]
    pub utilization: UtilizationParams,
    #[serde(default)]
    pub retention: RetentionParams,
    #[serde(default)]
    pub safte: SafteParams,
    #[serde(default)]
    pub sleep: SleepSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Each visit draws the next region from the selection probabilities.
    Independent,
    /// Markov chain on the graph with the selection probabilities as target.
    MetropolisHastings,
    /// Fastest-mixing chain; parsed so it can be rejected with a message.
    Fmmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMode {
    RecedingHorizon,
    /// Steady-state knapsack allocation, ignoring the queue.
    Knapsack,
}

fn receding_horizon() -> AllocationMode {
    AllocationMode::RecedingHorizon
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub horizon: usize,
    pub duration_step: f64,
    pub queue_step: f64,
    pub queue_cap: f64,
    pub cusum_threshold: f64,
    pub critical_belief: f64,
    pub routing: RoutingMode,
    #[serde(default = "receding_horizon")]
    pub allocation: AllocationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub duration: f64,
    pub seed: u64,
    pub exogenous_factors: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anomaly {
    /// 1-based region index.
    pub region: usize,
    pub onset: f64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        let errs = s.validate();
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Scenario::from_toml(&text).map_err(|e| match e {
            Error::Config(errs) => Error::Config(
                errs.into_iter()
                    .map(|m| format!("{}: {m}", path.display()))
                    .collect(),
            ),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(vec![e.to_string()]))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn region_count(&self) -> usize {
        self.graph.collection.len()
    }

    pub fn surveillance_graph(&self) -> SurveillanceGraph {
        let m = self.region_count();
        SurveillanceGraph {
            travel: self.graph.travel.clone(),
            collection: self.graph.collection.clone(),
            adjacency: self
                .graph
                .adjacency
                .clone()
                .unwrap_or_else(|| vec![vec![true; m]; m]),
            weights: self.regions.weights.clone(),
            deadlines: self.regions.deadlines.clone(),
        }
    }

    pub fn ddm(&self) -> DdmParams {
        let o = &self.operator;
        DdmParams {
            drift_magnitude: o.drift,
            diffusion: o.diffusion,
            interrogation_threshold: o.interrogation_threshold,
            free_response_threshold: 0.0,
            delay_cost: o.delay_cost,
            error_cost: o.error_cost,
        }
    }

    pub fn operator_model(&self) -> OperatorModel {
        let ddm = self.ddm();
        if self.run.exogenous_factors {
            let o = &self.operator;
            OperatorModel::Unified {
                ddm,
                factors: HumanFactors {
                    utilization: o.utilization.clone(),
                    retention: o.retention,
                    safte: o.safte,
                    sleep: o.sleep,
                },
            }
        } else {
            OperatorModel::Simple(ddm)
        }
    }

    pub fn grids(&self) -> Grids {
        Grids {
            duration_step: self.algorithm.duration_step,
            queue_step: self.algorithm.queue_step,
            queue_cap: self.algorithm.queue_cap,
        }
    }

    /// Every problem with the scenario; empty when it is usable.
    pub fn validate(&self) -> Vec<String> {
        let m = self.region_count();
        let mut errs = self.surveillance_graph().validate();

        if let Err(e) = self.ddm().validate() {
            errs.push(format!("operator: {e}"));
        }
        let o = &self.operator;
        if !(0.0..=1.0).contains(&o.initial_utilization) {
            errs.push(format!(
                "operator.initial_utilization must lie in [0,1], got {}",
                o.initial_utilization
            ));
        }
        errs.extend(o.utilization.validate());
        errs.extend(o.retention.validate());
        if !(o.safte.reservoir_capacity > 0.0) {
            errs.push(format!(
                "operator.safte.reservoir_capacity must be > 0, got {}",
                o.safte.reservoir_capacity
            ));
        }
        if !(0.0..24.0).contains(&o.sleep.wake_hour) {
            errs.push(format!(
                "operator.sleep.wake_hour must lie in [0,24), got {}",
                o.sleep.wake_hour
            ));
        }

        let a = &self.algorithm;
        if a.horizon == 0 {
            errs.push("algorithm.horizon must be >= 1".into());
        }
        for (name, v) in [
            ("duration_step", a.duration_step),
            ("queue_step", a.queue_step),
            ("cusum_threshold", a.cusum_threshold),
        ] {
            if !(v > 0.0) {
                errs.push(format!("algorithm.{name} must be > 0, got {v}"));
            }
        }
        if !(a.queue_cap >= 1.0) {
            errs.push(format!(
                "algorithm.queue_cap must be >= 1, got {}",
                a.queue_cap
            ));
        }
        if !(0.5..1.0).contains(&a.critical_belief) {
            errs.push(format!(
                "algorithm.critical_belief must lie in [0.5,1), got {}",
                a.critical_belief
            ));
        }
        if a.routing == RoutingMode::Fmmc {
            errs.push(
                "algorithm.routing = \"fmmc\" is not supported (the fastest-mixing chain needs a semidefinite \
                 program solver); use \"independent\" or \"metropolis_hastings\""
                    .into(),
            );
        }

        if !(self.run.duration > 0.0 && self.run.duration.is_finite()) {
            errs.push(format!(
                "run.duration must be finite and > 0, got {}",
                self.run.duration
            ));
        }
        for (i, an) in self.anomalies.iter().enumerate() {
            if an.region == 0 || an.region > m {
                errs.push(format!(
                    "anomalies[{i}].region must lie in 1..={m}, got {}",
                    an.region
                ));
            }
            if !(an.onset >= 0.0 && an.onset < self.run.duration) {
                errs.push(format!(
                    "anomalies[{i}].onset must lie in [0, run.duration), got {}",
                    an.onset
                ));
            }
        }
        errs
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[graph]
travel = [[0.0, 1.0], [1.0, 0.0]]
collection = [1.0, 1.0]

[regions]
weights = [1.0, 1.0]
deadlines = [10.0, 10.0]

[operator]
drift = 0.3
diffusion = 1.0
delay_cost = 1.0
error_cost = 40.0
initial_utilization = 0.7

[algorithm]
horizon = 2
duration_step = 1.0
queue_step = 0.5
queue_cap = 10.0
cusum_threshold = 5.0
critical_belief = 0.8
routing = "independent"

[run]
duration = 100.0
seed = 1
exogenous_factors = false

[[anomalies]]
region = 2
onset = 10.0
"#;

    #[test]
    fn minimal_file_parses_and_round_trips() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(
            s.anomalies,
            vec![Anomaly {
                region: 2,
                onset: 10.0
            }]
        );
        assert_eq!(s.operator.utilization, UtilizationParams::default());
        let again = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seed = 1", "seed = 1\nspeed = 3");
        let err = Scenario::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("speed"), "{err}");
    }

    #[test]
    fn all_errors_are_reported() {
        let text = MINIMAL
            .replace("deadlines = [10.0, 10.0]", "deadlines = [10.0, -1.0]")
            .replace("routing = \"independent\"", "routing = \"fmmc\"")
            .replace("region = 2", "region = 3");
        let Err(Error::Config(errs)) = Scenario::from_toml(&text) else {
            panic!("expected config errors");
        };
        assert!(
            errs.iter().any(|e| e.contains("regions.deadlines[1]")),
            "{errs:?}"
        );
        assert!(errs.iter().any(|e| e.contains("fmmc")), "{errs:?}");
        assert!(
            errs.iter().any(|e| e.contains("anomalies[0].region")),
            "{errs:?}"
        );
    }

    #[test]
    fn dimension_mismatch() {
        let text = MINIMAL.replace(
            "[[0.0, 1.0], [1.0, 0.0]]",
            "[[0.0, 1.0, 2.0], [1.0, 0.0, 2.0]]",
        );
        let Err(Error::Config(errs)) = Scenario::from_toml(&text) else {
            panic!("expected config errors");
        };
        assert!(errs.iter().any(|e| e.contains("2x2")), "{errs:?}");
    }
}
