//! Radial feeder data model.
//!
//! A [`Network`] is an immutable tree rooted at the substation (node 0). Line
//! `i` connects node `i` to its ancestor, so lines are keyed by their
//! downstream node. Parameters are stored in physical units; per-unit views
//! are produced through [`PerUnitBase`].

mod feeder;
mod units;

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use feeder::{
    day_type_feeder, local_control_feeder, rho_study_feeder, FeederSpec, LateralSpec, PvLayout,
};
pub use units::PerUnitBase;

pub const ROOT_ID: u32 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    #[error("cycle detected through node {node}")]
    CycleDetected { node: u32 },
    #[error("node {node} is not connected to the root")]
    DisconnectedNode { node: u32 },
    #[error("node {node} has no line to its ancestor")]
    MissingLine { node: u32 },
    #[error("bad parameter `{field}` at node {node:?}: {reason}")]
    BadParameter {
        node: Option<u32>,
        field: &'static str,
        reason: String,
    },
    #[error("unknown node {node}")]
    UnknownNode { node: u32 },
    #[error("i/o error: {0}")]
    Io(String),
}

fn bad(node: Option<u32>, field: &'static str, reason: impl Into<String>) -> NetworkError {
    NetworkError::BadParameter {
        node,
        field,
        reason: reason.into(),
    }
}

fn default_k_u() -> f64 {
    1.0
}

/// User and load data at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeParams {
    pub id: u32,
    pub ancestor: Option<u32>,
    #[serde(default)]
    pub p_l_mw: f64,
    #[serde(default)]
    pub q_l_mvar: f64,
    pub pf: f64,
    #[serde(default)]
    pub pc_min_mw: f64,
    #[serde(default)]
    pub pc_max_mw: f64,
    #[serde(default)]
    pub s_w_mva: f64,
    /// Shunt susceptance coefficient in MVar/(kV)²; enters as `q_s · v`.
    #[serde(default)]
    pub q_s: f64,
    #[serde(default = "default_k_u")]
    pub k_u: f64,
}

impl NodeParams {
    /// Root node with no user attached.
    pub fn substation() -> Self {
        Self {
            id: ROOT_ID,
            ancestor: None,
            p_l_mw: 0.0,
            q_l_mvar: 0.0,
            pf: 1.0,
            pc_min_mw: 0.0,
            pc_max_mw: 0.0,
            s_w_mva: 0.0,
            q_s: 0.0,
            k_u: 0.0,
        }
    }

    /// Slope of elastic reactive consumption, `q_c = slope · p_c`.
    pub fn qc_slope(&self) -> f64 {
        (1.0 / (self.pf * self.pf) - 1.0).max(0.0).sqrt()
    }

    /// Largest real PV output, `s_w / 1.1`.
    pub fn w_max_mw(&self) -> f64 {
        self.s_w_mva / 1.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    /// Downstream node id; the line is labelled by it.
    pub node: u32,
    pub r_ohm: f64,
    pub x_ohm: f64,
    pub l_max_ka2: f64,
}

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub v0_kv: f64,
    pub s_base_mva: f64,
    pub epsilon: f64,
    pub nodes: Vec<NodeParams>,
    pub lines: Vec<LineParams>,
}

/// Validated radial feeder. Nodes are addressed internally by dense indices
/// (sorted by id, so the root is index 0).
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<NodeParams>,
    lines: Vec<Option<LineParams>>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    depth: Vec<usize>,
    index: HashMap<u32, usize>,
    v0_kv: f64,
    s_base_mva: f64,
    epsilon: f64,
}

/// Per-unit line data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuLine {
    pub r: f64,
    pub x: f64,
    pub l_max: f64,
}

/// Per-unit user data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PuNode {
    pub p_l: f64,
    pub q_l: f64,
    pub pc_min: f64,
    pub pc_max: f64,
    pub s_w: f64,
    pub q_s: f64,
    /// Utility weight rescaled so that `k_u·(pc − pc_max)²` in per-unit
    /// equals the physical utility.
    pub k_u: f64,
    pub qc_slope: f64,
}

impl Network {
    /// Validates and builds a network.
    pub fn build(
        nodes: Vec<NodeParams>,
        lines: Vec<LineParams>,
        v0_kv: f64,
        s_base_mva: f64,
        epsilon: f64,
    ) -> Result<Self, NetworkError> {
        if !(v0_kv.is_finite() && v0_kv > 0.0) {
            return Err(bad(None, "v0_kv", "must be positive"));
        }
        if !(s_base_mva.is_finite() && s_base_mva > 0.0) {
            return Err(bad(None, "s_base_mva", "must be positive"));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(bad(None, "epsilon", "must lie in (0, 1)"));
        }

        let mut nodes = nodes;
        nodes.sort_by_key(|n| n.id);
        let mut index = HashMap::with_capacity(nodes.len());
        for (k, n) in nodes.iter().enumerate() {
            if index.insert(n.id, k).is_some() {
                return Err(bad(Some(n.id), "id", "duplicate node id"));
            }
        }
        if nodes.first().map(|n| n.id) != Some(ROOT_ID) {
            return Err(NetworkError::UnknownNode { node: ROOT_ID });
        }
        for n in &nodes {
            validate_node(n)?;
        }

        let len = nodes.len();
        let mut parent = vec![None; len];
        for (k, n) in nodes.iter().enumerate() {
            match (n.id, n.ancestor) {
                (ROOT_ID, None) => {}
                (ROOT_ID, Some(_)) => return Err(bad(Some(ROOT_ID), "ancestor", "root has no ancestor")),
                (id, None) => return Err(NetworkError::DisconnectedNode { node: id }),
                (id, Some(a)) => match index.get(&a) {
                    Some(&p) => parent[k] = Some(p),
                    None => return Err(NetworkError::DisconnectedNode { node: id }),
                },
            }
        }

        // Walk every ancestor chain; a chain longer than the node count loops.
        for start in 0..len {
            let mut cur = start;
            let mut steps = 0usize;
            while let Some(p) = parent[cur] {
                cur = p;
                steps += 1;
                if steps > len {
                    return Err(NetworkError::CycleDetected { node: nodes[start].id });
                }
            }
        }

        let mut line_slots: Vec<Option<LineParams>> = vec![None; len];
        for l in lines {
            let k = *index
                .get(&l.node)
                .ok_or(NetworkError::UnknownNode { node: l.node })?;
            if k == 0 {
                return Err(bad(Some(ROOT_ID), "lines", "the root has no incoming line"));
            }
            validate_line(&l)?;
            if line_slots[k].is_some() {
                return Err(bad(Some(l.node), "lines", "duplicate line"));
            }
            line_slots[k] = Some(l);
        }
        for (k, slot) in line_slots.iter().enumerate().skip(1) {
            if slot.is_none() {
                return Err(NetworkError::MissingLine { node: nodes[k].id });
            }
        }

        let mut children = vec![Vec::new(); len];
        for k in 1..len {
            let p = parent[k].expect("non-root has a parent");
            children[p].push(k);
        }
        let mut order = Vec::with_capacity(len);
        let mut depth = vec![0usize; len];
        let mut queue = VecDeque::from([0usize]);
        while let Some(k) = queue.pop_front() {
            order.push(k);
            for &c in &children[k] {
                depth[c] = depth[k] + 1;
                queue.push_back(c);
            }
        }
        debug_assert_eq!(order.len(), len);

        Ok(Self {
            nodes,
            lines: line_slots,
            parent,
            children,
            order,
            depth,
            index,
            v0_kv,
            s_base_mva,
            epsilon,
        })
    }

    pub fn from_file(file: NetworkFile) -> Result<Self, NetworkError> {
        Self::build(file.nodes, file.lines, file.v0_kv, file.s_base_mva, file.epsilon)
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self, NetworkError> {
        let text = std::fs::read_to_string(path).map_err(|e| NetworkError::Io(e.to_string()))?;
        let file: NetworkFile =
            serde_json::from_str(&text).map_err(|e| NetworkError::Io(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            v0_kv: self.v0_kv,
            s_base_mva: self.s_base_mva,
            epsilon: self.epsilon,
            nodes: self.nodes.clone(),
            lines: self.lines.iter().flatten().cloned().collect(),
        }
    }

    /// Number of nodes including the root (`N + 1`).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Always false: a validated network contains at least the root.
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_lines(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn v0_kv(&self) -> f64 {
        self.v0_kv
    }

    pub fn s_base_mva(&self) -> f64 {
        self.s_base_mva
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn base(&self) -> PerUnitBase {
        PerUnitBase::new(self.s_base_mva, self.v0_kv)
    }

    pub fn node(&self, idx: usize) -> &NodeParams {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[NodeParams] {
        &self.nodes
    }

    /// Line feeding `idx`; `None` only for the root.
    pub fn line(&self, idx: usize) -> Option<&LineParams> {
        self.lines[idx].as_ref()
    }

    pub fn parent(&self, idx: usize) -> Option<usize> {
        self.parent[idx]
    }

    pub fn children(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    /// Breadth-first order, root first; every parent precedes its children.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn depth(&self, idx: usize) -> usize {
        self.depth[idx]
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&k| k != 0 && self.children[k].is_empty())
    }

    pub fn index_of(&self, id: u32) -> Result<usize, NetworkError> {
        self.index
            .get(&id)
            .copied()
            .ok_or(NetworkError::UnknownNode { node: id })
    }

    pub fn id_of(&self, idx: usize) -> u32 {
        self.nodes[idx].id
    }

    /// Ids of all non-root nodes, ascending.
    pub fn user_ids(&self) -> Vec<u32> {
        self.nodes.iter().skip(1).map(|n| n.id).collect()
    }

    /// Root-to-node index path, inclusive of both ends.
    pub fn path_indices(&self, idx: usize) -> Vec<usize> {
        let mut path = vec![idx];
        let mut cur = idx;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Ordered path from the root to `id`. With `include_root == false` the
    /// root is dropped, giving the set of lines on the path.
    pub fn path_to_root(&self, id: u32, include_root: bool) -> Result<Vec<u32>, NetworkError> {
        let idx = self.index_of(id)?;
        let skip = usize::from(!include_root);
        Ok(self
            .path_indices(idx)
            .into_iter()
            .skip(skip)
            .map(|k| self.nodes[k].id)
            .collect())
    }

    pub fn pu_line(&self, idx: usize) -> Option<PuLine> {
        let b = self.base();
        self.lines[idx].as_ref().map(|l| PuLine {
            r: b.impedance_to_pu(l.r_ohm),
            x: b.impedance_to_pu(l.x_ohm),
            l_max: b.current_sq_to_pu(l.l_max_ka2),
        })
    }

    pub fn pu_node(&self, idx: usize) -> PuNode {
        let b = self.base();
        let n = &self.nodes[idx];
        PuNode {
            p_l: b.power_to_pu(n.p_l_mw),
            q_l: b.power_to_pu(n.q_l_mvar),
            pc_min: b.power_to_pu(n.pc_min_mw),
            pc_max: b.power_to_pu(n.pc_max_mw),
            s_w: b.power_to_pu(n.s_w_mva),
            q_s: b.shunt_to_pu(n.q_s),
            k_u: n.k_u * self.s_base_mva * self.s_base_mva,
            qc_slope: n.qc_slope(),
        }
    }

    /// Squared substation voltage in per-unit (1 when `V_base = V0`).
    pub fn v0_pu(&self) -> f64 {
        self.base().voltage_sq_to_pu(self.v0_kv * self.v0_kv)
    }
}

fn finite(node: u32, field: &'static str, v: f64) -> Result<(), NetworkError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(bad(Some(node), field, "must be finite"))
    }
}

fn validate_node(n: &NodeParams) -> Result<(), NetworkError> {
    let id = n.id;
    for (field, v) in [
        ("p_l_mw", n.p_l_mw),
        ("q_l_mvar", n.q_l_mvar),
        ("pf", n.pf),
        ("pc_min_mw", n.pc_min_mw),
        ("pc_max_mw", n.pc_max_mw),
        ("s_w_mva", n.s_w_mva),
        ("q_s", n.q_s),
        ("k_u", n.k_u),
    ] {
        finite(id, field, v)?;
    }
    if !(n.pf > 0.0 && n.pf <= 1.0) {
        return Err(bad(Some(id), "pf", "power factor must lie in (0, 1]"));
    }
    if n.pc_min_mw < 0.0 || n.pc_min_mw > n.pc_max_mw {
        return Err(bad(Some(id), "pc_min_mw", "need 0 <= pc_min <= pc_max"));
    }
    if n.s_w_mva < 0.0 {
        return Err(bad(Some(id), "s_w_mva", "must be non-negative"));
    }
    if n.k_u < 0.0 {
        return Err(bad(Some(id), "k_u", "utility weight must be non-negative"));
    }
    if id == ROOT_ID && (n.p_l_mw != 0.0 || n.q_l_mvar != 0.0 || n.pc_max_mw != 0.0 || n.s_w_mva != 0.0) {
        return Err(bad(Some(id), "root", "the substation carries no load or PV"));
    }
    Ok(())
}

fn validate_line(l: &LineParams) -> Result<(), NetworkError> {
    for (field, v) in [("r_ohm", l.r_ohm), ("x_ohm", l.x_ohm), ("l_max_ka2", l.l_max_ka2)] {
        finite(l.node, field, v)?;
    }
    if l.r_ohm < 0.0 || l.x_ohm < 0.0 {
        return Err(bad(Some(l.node), "r_ohm", "impedance must be non-negative"));
    }
    if l.r_ohm == 0.0 && l.x_ohm == 0.0 {
        return Err(bad(Some(l.node), "x_ohm", "r and x cannot both be zero"));
    }
    if l.l_max_ka2 <= 0.0 {
        return Err(bad(Some(l.node), "l_max_ka2", "must be positive"));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn user(id: u32, ancestor: u32) -> NodeParams {
        NodeParams {
            id,
            ancestor: Some(ancestor),
            p_l_mw: 0.1,
            q_l_mvar: 0.03,
            pf: 0.94,
            pc_min_mw: 0.0,
            pc_max_mw: 0.05,
            s_w_mva: 0.1,
            q_s: 0.0,
            k_u: 1.0,
        }
    }

    pub(crate) fn line(node: u32) -> LineParams {
        LineParams {
            node,
            r_ohm: 0.066,
            x_ohm: 0.076,
            l_max_ka2: 0.5,
        }
    }

    pub(crate) fn chain(n: u32) -> Network {
        let mut nodes = vec![NodeParams::substation()];
        let mut lines = Vec::new();
        for k in 1..=n {
            nodes.push(user(k, k - 1));
            lines.push(line(k));
        }
        Network::build(nodes, lines, 7.2, 1.0, 0.05).unwrap()
    }

    #[test]
    fn smallest_chain_children() {
        let net = chain(2);
        assert_eq!(net.children(0), &[1]);
        assert_eq!(net.children(1), &[2]);
        assert!(net.children(2).is_empty());
        assert_eq!(net.order(), &[0, 1, 2]);
    }

    #[test]
    fn duplicate_line_is_rejected() {
        let nodes = vec![NodeParams::substation(), user(1, 0), user(2, 1)];
        let lines = vec![line(1), line(2), line(2)];
        let err = Network::build(nodes, lines, 7.2, 1.0, 0.05).unwrap_err();
        assert!(matches!(err, NetworkError::BadParameter { node: Some(2), field: "lines", .. }));
    }

    #[test]
    fn missing_line_is_rejected() {
        let nodes = vec![NodeParams::substation(), user(1, 0), user(2, 1)];
        let err = Network::build(nodes, vec![line(1)], 7.2, 1.0, 0.05).unwrap_err();
        assert_eq!(err, NetworkError::MissingLine { node: 2 });
    }

    #[test]
    fn cycle_and_disconnection() {
        let nodes = vec![NodeParams::substation(), user(1, 2), user(2, 1)];
        let err = Network::build(nodes, vec![line(1), line(2)], 7.2, 1.0, 0.05).unwrap_err();
        assert!(matches!(err, NetworkError::CycleDetected { .. }));

        let nodes = vec![NodeParams::substation(), user(1, 0), user(2, 9)];
        let err = Network::build(nodes, vec![line(1), line(2)], 7.2, 1.0, 0.05).unwrap_err();
        assert_eq!(err, NetworkError::DisconnectedNode { node: 2 });
    }

    #[test]
    fn parameter_validation() {
        let mut bad_pf = user(1, 0);
        bad_pf.pf = 0.0;
        let err = Network::build(vec![NodeParams::substation(), bad_pf], vec![line(1)], 7.2, 1.0, 0.05)
            .unwrap_err();
        assert!(matches!(err, NetworkError::BadParameter { field: "pf", .. }));

        let mut zero = line(1);
        zero.r_ohm = 0.0;
        zero.x_ohm = 0.0;
        let err = Network::build(vec![NodeParams::substation(), user(1, 0)], vec![zero], 7.2, 1.0, 0.05)
            .unwrap_err();
        assert!(matches!(err, NetworkError::BadParameter { field: "x_ohm", .. }));

        let err = Network::build(vec![NodeParams::substation(), user(1, 0)], vec![line(1)], 7.2, 1.0, 1.5)
            .unwrap_err();
        assert!(matches!(err, NetworkError::BadParameter { field: "epsilon", .. }));
    }

    #[test]
    fn paths() {
        let net = chain(2);
        assert_eq!(net.path_to_root(2, true).unwrap(), vec![0, 1, 2]);
        assert_eq!(net.path_to_root(2, false).unwrap(), vec![1, 2]);
        assert_eq!(net.path_to_root(0, true).unwrap(), vec![0]);
        assert_eq!(net.path_to_root(7, true), Err(NetworkError::UnknownNode { node: 7 }));
    }

    #[test]
    fn json_round_trip_preserves_network() {
        let net = chain(3);
        let text = serde_json::to_string(&net.to_file()).unwrap();
        let back = Network::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back.to_file(), net.to_file());
    }
}
