//! Stochastic vehicle routing: the surveillance graph, Metropolis-Hastings
//! patrol chains, likelihood-proportional region selection and the expected
//! arrival rate of tasks it induces.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ddm::logistic;
use crate::detection::CusumBank;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveillanceGraph {
    /// Travel times between regions, symmetric with a zero diagonal.
    pub travel: Vec<Vec<f64>>,
    /// Evidence-collection time per region.
    pub collection: Vec<f64>,
    /// Which regions can be visited from which (self-loops allowed).
    pub adjacency: Vec<Vec<bool>>,
    pub weights: Vec<f64>,
    pub deadlines: Vec<f64>,
}

impl SurveillanceGraph {
    /// Complete graph with self-loops, unit weights.
    pub fn complete(travel: Vec<Vec<f64>>, collection: Vec<f64>, deadlines: Vec<f64>) -> Self {
        let m = collection.len();
        SurveillanceGraph {
            travel,
            collection,
            adjacency: vec![vec![true; m]; m],
            weights: vec![1.0; m],
            deadlines,
        }
    }

    pub fn region_count(&self) -> usize {
        self.collection.len()
    }

    /// Every structural problem with the graph; empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let m = self.collection.len();
        if m == 0 {
            errs.push("graph.collection must list at least one region".into());
            return errs;
        }
        if self.travel.len() != m || self.travel.iter().any(|r| r.len() != m) {
            errs.push(format!(
                "graph.travel must be {m}x{m} (one row and column per region), got {} rows with lengths {:?}",
                self.travel.len(),
                self.travel.iter().map(Vec::len).collect::<Vec<_>>()
            ));
        } else {
            for i in 0..m {
                if self.travel[i][i] != 0.0 {
                    errs.push(format!(
                        "graph.travel[{i}][{i}] must be 0, got {}",
                        self.travel[i][i]
                    ));
                }
                for j in 0..m {
                    let d = self.travel[i][j];
                    if !(d >= 0.0 && d.is_finite()) {
                        errs.push(format!(
                            "graph.travel[{i}][{j}] must be finite and >= 0, got {d}"
                        ));
                    }
                    if j > i && d != self.travel[j][i] {
                        errs.push(format!(
                            "graph.travel is not symmetric: [{i}][{j}]={d} but [{j}][{i}]={}",
                            self.travel[j][i]
                        ));
                    }
                }
            }
        }
        for (k, &c) in self.collection.iter().enumerate() {
            if !(c > 0.0 && c.is_finite()) {
                errs.push(format!("graph.collection[{k}] must be > 0, got {c}"));
            }
        }
        if self.adjacency.len() != m || self.adjacency.iter().any(|r| r.len() != m) {
            errs.push(format!("graph.adjacency must be {m}x{m}"));
        } else {
            for i in 0..m {
                for j in (i + 1)..m {
                    if self.adjacency[i][j] != self.adjacency[j][i] {
                        errs.push(format!("graph.adjacency is not symmetric at [{i}][{j}]"));
                    }
                }
            }
            if !is_connected(&self.adjacency) {
                errs.push("graph.adjacency must describe a connected graph".into());
            }
        }
        if self.weights.len() != m {
            errs.push(format!(
                "regions.weights must have {m} entries, got {}",
                self.weights.len()
            ));
        }
        for (k, &w) in self.weights.iter().enumerate() {
            if !(w > 0.0 && w.is_finite()) {
                errs.push(format!("regions.weights[{k}] must be > 0, got {w}"));
            }
        }
        if self.deadlines.len() != m {
            errs.push(format!(
                "regions.deadlines must have {m} entries, got {}",
                self.deadlines.len()
            ));
        }
        for (k, &d) in self.deadlines.iter().enumerate() {
            if !(d > 0.0 && d.is_finite()) {
                errs.push(format!("regions.deadlines[{k}] must be > 0, got {d}"));
            }
        }
        errs
    }
}

fn is_connected(adj: &[Vec<bool>]) -> bool {
    let m = adj.len();
    if m == 0 {
        return true;
    }
    let mut seen = vec![false; m];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for j in 0..m {
            if adj[i][j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Probability of sending the vehicle to each region next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    q: Vec<f64>,
}

impl RoutingPolicy {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.is_empty() || q.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain(
                "RoutingPolicy",
                format!("entries must be finite and >= 0: {q:?}"),
            ));
        }
        let sum: f64 = q.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(
                "RoutingPolicy",
                format!("entries must sum to 1, got {sum}"),
            ));
        }
        Ok(RoutingPolicy { q })
    }

    pub fn uniform(m: usize) -> Self {
        RoutingPolicy {
            q: vec![1.0 / m as f64; m],
        }
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

/// Transition matrix with stationary distribution `target`, supported on the
/// graph's edges.
///
/// `d_i` counts every region reachable from `i` in one move, itself included
/// when it has a self-loop.
pub fn metropolis_hastings(adjacency: &[Vec<bool>], target: &[f64]) -> Result<Vec<Vec<f64>>> {
    let m = target.len();
    if adjacency.len() != m || adjacency.iter().any(|r| r.len() != m) {
        return Err(Error::domain(
            "metropolis_hastings",
            format!("adjacency must be {m}x{m}"),
        ));
    }
    if let Some(k) = target.iter().position(|&q| !(q > 0.0)) {
        return Err(Error::domain(
            "metropolis_hastings",
            format!(
                "target must be strictly positive, entry {k} is {}",
                target[k]
            ),
        ));
    }
    if !is_connected(adjacency) {
        return Err(Error::domain(
            "metropolis_hastings",
            "graph must be connected",
        ));
    }
    let degree: Vec<f64> = adjacency
        .iter()
        .map(|row| row.iter().filter(|&&e| e).count() as f64)
        .collect();
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        let mut off = 0.0;
        for j in 0..m {
            if i != j && adjacency[i][j] {
                let v = (1.0 / degree[i]).min(target[j] / (target[i] * degree[j]));
                a[i][j] = v;
                off += v;
            }
        }
        a[i][i] = 1.0 - off;
    }
    Ok(a)
}

/// `q_k ∝ e^{Λ_k} / (1 + e^{Λ_k})`.
pub fn likelihood_routing(bank: &CusumBank) -> RoutingPolicy {
    let raw: Vec<f64> = bank.statistics().iter().map(|&s| logistic(s)).collect();
    let sum: f64 = raw.iter().sum();
    RoutingPolicy {
        q: raw.into_iter().map(|r| r / sum).collect(),
    }
}

/// Expected travel plus collection time per visit, `qᵀDq + qᵀT`.
pub fn expected_cycle_time(policy: &RoutingPolicy, graph: &SurveillanceGraph) -> f64 {
    let q = policy.probabilities();
    let travel: f64 = q
        .iter()
        .zip(&graph.travel)
        .map(|(&qi, row)| qi * row.iter().zip(q).map(|(d, qj)| d * qj).sum::<f64>())
        .sum();
    let collect: f64 = q.iter().zip(&graph.collection).map(|(qk, t)| qk * t).sum();
    travel + collect
}

/// Expected task arrival rate `λ`, the reciprocal of the cycle time.
pub fn arrival_rate(policy: &RoutingPolicy, graph: &SurveillanceGraph) -> f64 {
    1.0 / expected_cycle_time(policy, graph)
}

/// Expected travel plus collection time per visit when the vehicle follows
/// the chain `transition` in its stationary regime `policy`.
pub fn chain_cycle_time(
    policy: &RoutingPolicy,
    transition: &[Vec<f64>],
    graph: &SurveillanceGraph,
) -> f64 {
    let q = policy.probabilities();
    let travel: f64 = (0..q.len())
        .map(|i| {
            q[i] * transition[i]
                .iter()
                .zip(&graph.travel[i])
                .map(|(a, d)| a * d)
                .sum::<f64>()
        })
        .sum();
    let collect: f64 = q.iter().zip(&graph.collection).map(|(qk, t)| qk * t).sum();
    travel + collect
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &p) in probabilities.iter().enumerate() {
        if p > 0.0 {
            last_positive = k;
        }
        acc += p;
        if u < acc {
            return k;
        }
    }
    last_positive
}

pub fn sample_next_region<R: Rng + ?Sized>(policy: &RoutingPolicy, rng: &mut R) -> usize {
    sample_index(policy.probabilities(), rng)
}
