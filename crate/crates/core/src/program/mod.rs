//! The stochastic OPF instance in per-unit form, plus evaluation of candidate
//! solutions (objective, constraint audit, import/export complementarity).

mod audit;
mod solution;

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, PuLine, PuNode};
use crate::scalar::Scalar;
use crate::scenario::ScenarioSet;

pub use audit::{complementarity_check, feasibility_audit, objective_value, AuditReport, ObjectiveBreakdown};
pub use solution::{ScenarioSolution, ScenarioSolutionFile, Solution, SolutionFile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("scenario nodes do not match the network's user nodes")]
    ScenarioNetworkMismatch,
    #[error("injection {w_mw} MW at node {node} in scenario {scenario} exceeds the {s_w_mva} MVA nameplate")]
    InjectionExceedsNameplate {
        node: u32,
        scenario: usize,
        w_mw: f64,
        s_w_mva: f64,
    },
    #[error("bad objective parameter `{field}`: {reason}")]
    BadObjective { field: &'static str, reason: String },
    #[error("solution shape does not match the instance: {0}")]
    Shape(String),
}

/// Convex cost of power bought at the substation, in monetary units per MW
/// drawn. Used through the single-variable `P0` path of the root update.
pub trait ProvisionCost: Debug + Send + Sync {
    fn value(&self, p0_mw: f64) -> f64;
    fn derivative(&self, p0_mw: f64) -> f64;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CostModel {
    /// `a·P0⁺ − b·P0⁻` with the split variables of the root block.
    PiecewiseLinear { a: f64, b: f64 },
    /// `linear·P0 + quadratic·P0²`.
    Quadratic { linear: f64, quadratic: f64 },
    #[serde(skip)]
    Custom(Arc<dyn ProvisionCost>),
}

impl CostModel {
    pub fn is_piecewise(&self) -> bool {
        matches!(self, CostModel::PiecewiseLinear { .. })
    }

    pub(crate) fn smooth_value(&self, p0_mw: f64) -> f64 {
        match self {
            CostModel::PiecewiseLinear { a, b } => {
                if p0_mw >= 0.0 {
                    a * p0_mw
                } else {
                    b * p0_mw
                }
            }
            CostModel::Quadratic { linear, quadratic } => linear * p0_mw + quadratic * p0_mw * p0_mw,
            CostModel::Custom(c) => c.value(p0_mw),
        }
    }

    pub(crate) fn smooth_derivative(&self, p0_mw: f64) -> f64 {
        match self {
            CostModel::PiecewiseLinear { a, b } => {
                if p0_mw >= 0.0 {
                    *a
                } else {
                    *b
                }
            }
            CostModel::Quadratic { linear, quadratic } => linear + 2.0 * quadratic * p0_mw,
            CostModel::Custom(c) => c.derivative(p0_mw),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub cost: CostModel,
    pub k_loss: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            cost: CostModel::PiecewiseLinear { a: 0.0, b: 0.0 },
            k_loss: 1.0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), ProgramError> {
        let bad = |field, reason: &str| Err(ProgramError::BadObjective { field, reason: reason.into() });
        if !(self.k_loss >= 0.0 && self.k_loss.is_finite()) {
            return bad("k_loss", "must be non-negative");
        }
        match self.cost {
            CostModel::PiecewiseLinear { a, b } => {
                if !(b >= 0.0 && a >= b && a.is_finite()) {
                    return bad("a", "need a >= b >= 0");
                }
            }
            CostModel::Quadratic { linear, quadratic } => {
                if !(quadratic >= 0.0 && linear.is_finite() && quadratic.is_finite()) {
                    return bad("quadratic", "cost must be convex");
                }
            }
            CostModel::Custom(_) => {}
        }
        Ok(())
    }
}

/// Per-node data in per-unit, by dense network index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeData<T> {
    pub r: T,
    pub x: T,
    pub l_max: T,
    pub p_l: T,
    pub q_l: T,
    pub pc_min: T,
    pub pc_max: T,
    pub k_u: T,
    pub qc_slope: T,
    pub q_s: T,
    pub s_w: T,
}

#[derive(Debug, Clone)]
pub struct StochasticProgram<T: Scalar> {
    network: Network,
    scenarios: ScenarioSet,
    objective: ObjectiveConfig,
    nodes: Vec<NodeData<T>>,
    /// `w[m][k]`, per-unit injection at dense index `k` (0 at the root).
    w: Vec<Vec<T>>,
    qw_max: Vec<Vec<T>>,
    pi: Vec<T>,
    v0: T,
    v_min: T,
    v_max: T,
    pc_fixed: Option<Vec<T>>,
    reactive_support: bool,
}

impl<T: Scalar> StochasticProgram<T> {
    pub fn assemble(network: &Network, scenarios: &ScenarioSet, objective: &ObjectiveConfig) -> Result<Self, ProgramError> {
        objective.validate()?;
        let mut ids = scenarios.node_ids().to_vec();
        ids.sort_unstable();
        if ids != network.user_ids() {
            return Err(ProgramError::ScenarioNetworkMismatch);
        }
        let base = network.base();
        let len = network.len();
        let nodes: Vec<NodeData<T>> = (0..len)
            .map(|k| {
                let line = network.pu_line(k).unwrap_or(PuLine { r: 0.0, x: 0.0, l_max: 0.0 });
                let n: PuNode = network.pu_node(k);
                NodeData {
                    r: T::of(line.r),
                    x: T::of(line.x),
                    l_max: T::of(line.l_max),
                    p_l: T::of(n.p_l),
                    q_l: T::of(n.q_l),
                    pc_min: T::of(n.pc_min),
                    pc_max: T::of(n.pc_max),
                    k_u: T::of(n.k_u),
                    qc_slope: T::of(n.qc_slope),
                    q_s: T::of(n.q_s),
                    s_w: T::of(n.s_w),
                }
            })
            .collect();

        let slot: Vec<usize> = scenarios
            .node_ids()
            .iter()
            .map(|&id| network.index_of(id).expect("ids checked above"))
            .collect();
        let mut w = Vec::with_capacity(scenarios.len());
        let mut qw_max = Vec::with_capacity(scenarios.len());
        for (m, s) in scenarios.scenarios().iter().enumerate() {
            let mut wm = vec![T::zero(); len];
            let mut qm = vec![T::zero(); len];
            for (j, &k) in slot.iter().enumerate() {
                let node = network.node(k);
                let w_mw = s.w_mw[j];
                if w_mw > node.s_w_mva {
                    return Err(ProgramError::InjectionExceedsNameplate {
                        node: node.id,
                        scenario: m,
                        w_mw,
                        s_w_mva: node.s_w_mva,
                    });
                }
                let w_pu = base.power_to_pu(w_mw);
                let s_pu = base.power_to_pu(node.s_w_mva);
                wm[k] = T::of(w_pu);
                qm[k] = T::of((s_pu * s_pu - w_pu * w_pu).max(0.0).sqrt());
            }
            w.push(wm);
            qw_max.push(qm);
        }

        let v0 = network.v0_pu();
        let eps = network.epsilon();
        Ok(Self {
            network: network.clone(),
            scenarios: scenarios.clone(),
            objective: objective.clone(),
            nodes,
            w,
            qw_max,
            pi: scenarios.scenarios().iter().map(|s| T::of(s.pi)).collect(),
            v0: T::of(v0),
            v_min: T::of((1.0 - eps) * (1.0 - eps) * v0),
            v_max: T::of((1.0 + eps) * (1.0 + eps) * v0),
            pc_fixed: None,
            reactive_support: true,
        })
    }

    /// Forbids inverter reactive power (`q_w = 0` in every scenario).
    pub fn without_reactive_support(mut self) -> Self {
        self.reactive_support = false;
        self.qw_max.iter_mut().for_each(|row| row.iter_mut().for_each(|q| *q = T::zero()));
        self
    }

    /// Pins the first-stage consumption (per-unit, by dense index).
    pub fn with_fixed_pc(mut self, pc: Vec<T>) -> Result<Self, ProgramError> {
        if pc.len() != self.nodes.len() {
            return Err(ProgramError::Shape(format!("pc has {} entries, expected {}", pc.len(), self.nodes.len())));
        }
        self.pc_fixed = Some(pc);
        Ok(self)
    }

    /// The same instance restricted to the given scenario set.
    pub fn with_scenarios(&self, scenarios: &ScenarioSet) -> Result<Self, ProgramError> {
        let mut next = Self::assemble(&self.network, scenarios, &self.objective)?;
        if !self.reactive_support {
            next = next.without_reactive_support();
        }
        next.pc_fixed = self.pc_fixed.clone();
        Ok(next)
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn scenario_set(&self) -> &ScenarioSet {
        &self.scenarios
    }

    pub fn objective_config(&self) -> &ObjectiveConfig {
        &self.objective
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.pi.len()
    }

    pub fn node(&self, k: usize) -> &NodeData<T> {
        &self.nodes[k]
    }

    pub fn w(&self, m: usize, k: usize) -> T {
        self.w[m][k]
    }

    pub fn qw_max(&self, m: usize, k: usize) -> T {
        self.qw_max[m][k]
    }

    pub fn pi(&self, m: usize) -> T {
        self.pi[m]
    }

    pub fn v0(&self) -> T {
        self.v0
    }

    pub fn v_bounds(&self) -> (T, T) {
        (self.v_min, self.v_max)
    }

    pub fn pc_fixed(&self) -> Option<&[T]> {
        self.pc_fixed.as_deref()
    }

    pub fn reactive_support(&self) -> bool {
        self.reactive_support
    }

    pub fn s_base(&self) -> T {
        T::of(self.network.s_base_mva())
    }

    /// Loss weight in per-unit objective units.
    pub fn k_loss_pu(&self) -> T {
        T::of(self.objective.k_loss * self.network.s_base_mva())
    }

    /// `(a, b)` in per-unit objective units, when the cost is piecewise linear.
    pub fn prices_pu(&self) -> Option<(T, T)> {
        match self.objective.cost {
            CostModel::PiecewiseLinear { a, b } => {
                let s = self.network.s_base_mva();
                Some((T::of(a * s), T::of(b * s)))
            }
            _ => None,
        }
    }

    /// Derivative of the per-unit cost `C(S·P0)` at per-unit `p0`.
    pub fn cost_derivative_pu(&self, p0: T) -> T {
        let s = self.network.s_base_mva();
        T::of(s * self.objective.cost.smooth_derivative(p0.to_f64_lossy() * s))
    }

    /// Number of first-stage and second-stage blocks: `(users, per-scenario blocks)`.
    pub fn block_counts(&self) -> (usize, usize) {
        (self.nodes.len() - 1, self.nodes.len() * self.pi.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::day_type_feeder;
    use crate::scenario::{sample_scenarios, Correlation, MeanRatio, Scenario};

    #[test]
    fn reactive_limits_at_extremes() {
        let net = crate::network::tests::chain(2);
        let s_w = net.node(1).s_w_mva;
        let set = ScenarioSet::new(
            vec![1, 2],
            vec![Scenario { pi: 0.5, w_mw: vec![s_w, 0.0] }, Scenario { pi: 0.5, w_mw: vec![0.0, 0.0] }],
            0,
        )
        .unwrap();
        let prog = StochasticProgram::<f64>::assemble(&net, &set, &ObjectiveConfig::default()).unwrap();
        assert_eq!(prog.qw_max(0, 1), 0.0);
        assert!((prog.qw_max(0, 2) - s_w).abs() < 1e-15);
        assert!((prog.qw_max(1, 1) - s_w).abs() < 1e-15);
    }

    #[test]
    fn oversized_injection_and_mismatch_are_rejected() {
        let net = crate::network::tests::chain(2);
        let set = ScenarioSet::equiprobable(vec![1, 2], vec![vec![0.5, 0.0]], 0).unwrap();
        let err = StochasticProgram::<f64>::assemble(&net, &set, &ObjectiveConfig::default()).unwrap_err();
        assert!(matches!(err, ProgramError::InjectionExceedsNameplate { node: 1, .. }));
        let set = ScenarioSet::equiprobable(vec![1], vec![vec![0.0]], 0).unwrap();
        let err = StochasticProgram::<f64>::assemble(&net, &set, &ObjectiveConfig::default()).unwrap_err();
        assert_eq!(err, ProgramError::ScenarioNetworkMismatch);
    }

    #[test]
    fn block_counts_for_the_day_type_feeder() {
        let net = day_type_feeder().build().unwrap();
        let set = sample_scenarios(&net, &MeanRatio::Global(0.3), 7, 1, Correlation::Independent).unwrap();
        let prog = StochasticProgram::<f64>::assemble(&net, &set, &ObjectiveConfig::default()).unwrap();
        assert_eq!(prog.block_counts(), (50, 51 * 7));
        assert!((prog.node(3).r - 0.066 / 51.84).abs() < 1e-15);
        assert!((prog.node(3).l_max - 25.92).abs() < 1e-12);
    }

    #[test]
    fn objective_validation() {
        let mut cfg = ObjectiveConfig { cost: CostModel::PiecewiseLinear { a: 1.0, b: 2.0 }, k_loss: 1.0 };
        assert!(cfg.validate().is_err());
        cfg.cost = CostModel::PiecewiseLinear { a: 2.0, b: 1.0 };
        assert!(cfg.validate().is_ok());
        cfg.k_loss = -1.0;
        assert!(cfg.validate().is_err());
    }
}
