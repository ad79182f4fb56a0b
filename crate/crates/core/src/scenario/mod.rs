//! PV injection scenarios: beta-law sampling and fast-forward reduction.

mod beta;
mod reduction;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::compensated_sum;

pub use beta::{beta_params_from_mean, sample_scenarios, BetaParams, Correlation, MeanRatio};
pub use reduction::{fast_forward_reduce, kantorovich_distance, Metric, ReducedSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("{what} = {value} is out of range")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("the kept set is empty")]
    EmptyKeptSet,
    #[error("cannot reduce {total} scenarios to {m}")]
    BadCardinality { m: usize, total: usize },
    #[error("probabilities sum to {sum}, expected 1")]
    Probability { sum: f64 },
    #[error("scenario {index} does not cover the node set")]
    DomainMismatch { index: usize },
    #[error("index {index} is not a scenario of the set")]
    BadIndex { index: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

/// One joint PV realization. `w_mw[k]` belongs to the `k`-th node id of the
/// owning [`ScenarioSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub pi: f64,
    pub w_mw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    node_ids: Vec<u32>,
    scenarios: Vec<Scenario>,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub seed: u64,
    pub scenarios: Vec<ScenarioEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub pi: f64,
    pub w_mw: BTreeMap<u32, f64>,
}

impl ScenarioSet {
    pub fn new(node_ids: Vec<u32>, scenarios: Vec<Scenario>, seed: u64) -> Result<Self, ScenarioError> {
        if scenarios.is_empty() {
            return Err(ScenarioError::BadCardinality { m: 0, total: 0 });
        }
        for (index, s) in scenarios.iter().enumerate() {
            if s.w_mw.len() != node_ids.len() {
                return Err(ScenarioError::DomainMismatch { index });
            }
            if !(s.pi >= 0.0 && s.pi.is_finite()) {
                return Err(ScenarioError::OutOfRange { what: "pi", value: s.pi });
            }
            if let Some(&w) = s.w_mw.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
                return Err(ScenarioError::OutOfRange { what: "w_mw", value: w });
            }
        }
        let sum = compensated_sum(scenarios.iter().map(|s| s.pi));
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ScenarioError::Probability { sum });
        }
        Ok(Self { node_ids, scenarios, seed })
    }

    /// Equiprobable set from raw injection vectors.
    pub fn equiprobable(node_ids: Vec<u32>, w: Vec<Vec<f64>>, seed: u64) -> Result<Self, ScenarioError> {
        let pi = 1.0 / w.len().max(1) as f64;
        let scenarios = w.into_iter().map(|w_mw| Scenario { pi, w_mw }).collect();
        Self::new(node_ids, scenarios, seed)
    }

    pub fn node_ids(&self) -> &[u32] {
        &self.node_ids
    }

    pub fn scenarios(&self) -> &[Scenario] {
        &self.scenarios
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Injection of `node` in scenario `m`, if the node belongs to the domain.
    pub fn w(&self, m: usize, node: u32) -> Option<f64> {
        let k = self.node_ids.iter().position(|&id| id == node)?;
        Some(self.scenarios[m].w_mw[k])
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            seed: self.seed,
            scenarios: self
                .scenarios
                .iter()
                .map(|s| ScenarioEntry {
                    pi: s.pi,
                    w_mw: self.node_ids.iter().copied().zip(s.w_mw.iter().copied()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let node_ids: Vec<u32> = file
            .scenarios
            .first()
            .map(|s| s.w_mw.keys().copied().collect())
            .unwrap_or_default();
        let mut scenarios = Vec::with_capacity(file.scenarios.len());
        for (index, entry) in file.scenarios.into_iter().enumerate() {
            if entry.w_mw.len() != node_ids.len() || !node_ids.iter().all(|id| entry.w_mw.contains_key(id)) {
                return Err(ScenarioError::DomainMismatch { index });
            }
            scenarios.push(Scenario {
                pi: entry.pi,
                w_mw: entry.w_mw.into_values().collect(),
            });
        }
        Self::new(node_ids, scenarios, file.seed)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(e.to_string()))?;
        let file: ScenarioFile = serde_json::from_str(&text).map_err(|e| ScenarioError::Io(e.to_string()))?;
        Self::from_file(file)
    }

    /// Copy restricted to the given scenarios with renormalized weights.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, ScenarioError> {
        if indices.is_empty() {
            return Err(ScenarioError::EmptyKeptSet);
        }
        if let Some(&index) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(ScenarioError::BadIndex { index });
        }
        let total = compensated_sum(indices.iter().map(|&i| self.scenarios[i].pi));
        let scenarios = indices
            .iter()
            .map(|&i| Scenario {
                pi: if total > 0.0 { self.scenarios[i].pi / total } else { 1.0 / indices.len() as f64 },
                w_mw: self.scenarios[i].w_mw.clone(),
            })
            .collect();
        Self::new(self.node_ids.clone(), scenarios, self.seed)
    }
}
