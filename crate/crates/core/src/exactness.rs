//! A-priori sufficient condition for tightness of the conic relaxation, and
//! the linearized (lossless) power flow it is built on.
//!
//! All quantities here are physical: MW, MVar, Ω and (kV)².

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::Network;
use crate::program::StochasticProgram;
use crate::scalar::Scalar;

/// Components of the checked products must exceed this to count as positive.
pub const POSITIVITY_TOL: f64 = 1e-12;

/// Scope of the verdict: it certifies the relaxation of an instance changed
/// in these five ways, not the instance itself.
pub const MODIFICATIONS: [&str; 5] = [
    "the provision cost C(P0) is strictly increasing",
    "line current upper bounds are removed",
    "shunt capacitors are fixed reactive injections q_s·v0, independent of voltage",
    "the loss weight K_loss is zero",
    "the upper voltage limit is imposed on the linearized voltage instead of v",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExactnessError {
    #[error("`{what}` has {got} entries, the network has {expected} nodes")]
    Shape { what: &'static str, got: usize, expected: usize },
}

/// Linearized flows by dense node index. Entry `i` of `p_mw`/`q_mvar` is the
/// flow on the line feeding node `i`; at the root it is the substation total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinDistFlowSolution {
    pub p_mw: Vec<f64>,
    pub q_mvar: Vec<f64>,
    pub v_kv2: Vec<f64>,
}

/// Linearized power flow for net nodal consumptions
/// `(P_L + pc − w, Q_L + slope·pc − qw − q_s·v0²)`. Inputs are dense-index
/// slices; the root entries are ignored.
pub fn lindistflow(network: &Network, pc_mw: &[f64], qw_mvar: &[f64], w_mw: &[f64]) -> Result<LinDistFlowSolution, ExactnessError> {
    let n = network.len();
    for (what, got) in [("pc", pc_mw.len()), ("qw", qw_mvar.len()), ("w", w_mw.len())] {
        if got != n {
            return Err(ExactnessError::Shape { what, got, expected: n });
        }
    }
    let v0 = network.v0_kv() * network.v0_kv();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for &k in network.order().iter().rev() {
        if k != 0 {
            let node = network.node(k);
            p[k] += node.p_l_mw + pc_mw[k] - w_mw[k];
            q[k] += node.q_l_mvar + node.qc_slope() * pc_mw[k] - qw_mvar[k] - node.q_s * v0;
        }
        if let Some(parent) = network.parent(k) {
            p[parent] += p[k];
            q[parent] += q[k];
        }
    }
    let mut v = vec![v0; n];
    for &k in network.order() {
        if let (Some(parent), Some(line)) = (network.parent(k), network.line(k)) {
            v[k] = v[parent] - 2.0 * (line.r_ohm * p[k] + line.x_ohm * q[k]);
        }
    }
    Ok(LinDistFlowSolution {
        p_mw: p,
        q_mvar: q,
        v_kv2: v,
    })
}

/// A `(t, s)` window whose product has a non-positive component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// `None` for the scenario-independent check.
    pub scenario: Option<usize>,
    /// Node ids `d_1 … d_t` from the root side.
    pub path: Vec<u32>,
    pub t: usize,
    pub s: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessVerdict {
    pub per_scenario: Vec<bool>,
    pub m_independent: bool,
    /// Smallest product component seen per scenario; `None` when no window
    /// exists (every leaf within one line of the root).
    pub min_component_per_scenario: Vec<Option<f64>>,
    pub min_component_m_independent: Option<f64>,
    pub worst: Option<Violation>,
    pub modifications: Vec<String>,
    pub notes: Vec<String>,
}

impl ExactnessVerdict {
    pub fn all_scenarios_pass(&self) -> bool {
        self.per_scenario.iter().all(|&b| b)
    }
}

struct Outcome {
    min: Option<f64>,
    worst: Option<Violation>,
}

/// Checks every window on every root-to-leaf path. A window `(t, s)` only
/// involves `d_1 … d_t`, so each node is visited once as `d_t` and shared
/// prefixes are not re-walked per leaf.
fn check_windows(network: &Network, coeff: &[[f64; 2]], scenario: Option<usize>) -> Outcome {
    let v0 = network.v0_kv() * network.v0_kv();
    let eps = network.epsilon();
    let scale = 2.0 / ((1.0 - eps) * (1.0 - eps) * v0);
    let rx = |k: usize| {
        let line = network.line(k).expect("user nodes have a line");
        [line.r_ohm, line.x_ohm]
    };
    let mut out = Outcome { min: None, worst: None };
    for k in 1..network.len() {
        // path = [d_1, …, d_t] with d_t = k
        let path: Vec<usize> = network.path_indices(k).into_iter().skip(1).collect();
        let t = path.len();
        if t < 2 {
            continue;
        }
        let mut u = rx(k);
        for s in (0..=t - 2).rev() {
            // multiply by A̲_{d_{s+1}}, the next factor on the left
            let d = path[s];
            let [r, x] = rx(d);
            let c = coeff[d];
            let dot = scale * (c[0] * u[0] + c[1] * u[1]);
            u = [u[0] + r * dot, u[1] + x * dot];
            let value = u[0].min(u[1]);
            if out.min.is_none_or(|m| value < m) {
                out.min = Some(value);
                if value <= POSITIVITY_TOL {
                    out.worst = Some(Violation {
                        scenario,
                        path: path.iter().map(|&j| network.id_of(j)).collect(),
                        t,
                        s,
                        value,
                    });
                }
            }
        }
    }
    out
}

/// The negative parts `(P̆⁻, Q̆⁻)` at the lowest-consumption point: pc at its
/// minimum and full nameplate reactive injection.
fn lowest_consumption(network: &Network, w_mw: &[f64]) -> Vec<[f64; 2]> {
    let n = network.len();
    let pc: Vec<f64> = network.nodes().iter().map(|nd| nd.pc_min_mw).collect();
    let qw: Vec<f64> = network.nodes().iter().map(|nd| nd.s_w_mva).collect();
    let lin = lindistflow(network, &pc, &qw, w_mw).expect("dense vectors match the network");
    (0..n).map(|k| [lin.p_mw[k].min(0.0), lin.q_mvar[k].min(0.0)]).collect()
}

/// Evaluates the sufficient condition per scenario and in the stricter
/// scenario-independent form, where every injection is replaced by its
/// maximum over the set.
pub fn check_exactness<T: Scalar>(program: &StochasticProgram<T>) -> ExactnessVerdict {
    let network = program.network();
    let set = program.scenario_set();
    let n = network.len();
    let w: Vec<Vec<f64>> = (0..set.len())
        .map(|m| {
            (0..n)
                .map(|k| if k == 0 { 0.0 } else { set.w(m, network.id_of(k)).unwrap_or(0.0) })
                .collect()
        })
        .collect();
    let per: Vec<Outcome> = w
        .par_iter()
        .enumerate()
        .map(|(m, wm)| check_windows(network, &lowest_consumption(network, wm), Some(m)))
        .collect();
    let w_max: Vec<f64> = (0..n).map(|k| w.iter().map(|wm| wm[k]).fold(0.0, f64::max)).collect();
    let indep = check_windows(network, &lowest_consumption(network, &w_max), None);

    let pass = |o: &Outcome| o.min.is_none_or(|v| v > POSITIVITY_TOL);
    let worst = indep
        .worst
        .clone()
        .into_iter()
        .chain(per.iter().filter_map(|o| o.worst.clone()))
        .min_by(|a, b| a.value.total_cmp(&b.value));
    let mut notes = Vec::new();
    if network.nodes().iter().any(|nd| nd.q_s != 0.0) {
        notes.push("shunt injections enter at their value at v0, not at their maximum".to_string());
    }
    ExactnessVerdict {
        per_scenario: per.iter().map(pass).collect(),
        m_independent: pass(&indep),
        min_component_per_scenario: per.iter().map(|o| o.min).collect(),
        min_component_m_independent: indep.min,
        worst,
        modifications: MODIFICATIONS.iter().map(|s| s.to_string()).collect(),
        notes,
    }
}
