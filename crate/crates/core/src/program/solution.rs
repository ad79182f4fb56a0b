use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ProgramError, StochasticProgram};
use crate::network::Network;
use crate::scalar::Scalar;

/// Second-stage decisions of one scenario in per-unit, by dense node index.
/// The root entry holds the substation flow `P0`, `Q0` and voltage `v0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSolution<T> {
    pub qw: Vec<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub v: Vec<T>,
    pub l: Vec<T>,
    pub p0_plus: T,
    pub p0_minus: T,
}

impl<T: Scalar> ScenarioSolution<T> {
    pub fn zeros(len: usize) -> Self {
        Self {
            qw: vec![T::zero(); len],
            p: vec![T::zero(); len],
            q: vec![T::zero(); len],
            v: vec![T::zero(); len],
            l: vec![T::zero(); len],
            p0_plus: T::zero(),
            p0_minus: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    /// First-stage elastic consumption (per-unit, 0 at the root).
    pub pc: Vec<T>,
    pub scenarios: Vec<ScenarioSolution<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSolutionFile {
    pub qw_mvar: BTreeMap<u32, f64>,
    pub p_mw: BTreeMap<u32, f64>,
    pub q_mvar: BTreeMap<u32, f64>,
    pub v_kv2: BTreeMap<u32, f64>,
    pub l_ka2: BTreeMap<u32, f64>,
    pub p0_plus_mw: f64,
    pub p0_minus_mw: f64,
}

/// Physical-unit export, keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub pc_mw: BTreeMap<u32, f64>,
    pub qc_mvar: BTreeMap<u32, f64>,
    pub scenarios: Vec<ScenarioSolutionFile>,
}

impl<T: Scalar> Solution<T> {
    pub fn zeros(nodes: usize, scenarios: usize) -> Self {
        Self {
            pc: vec![T::zero(); nodes],
            scenarios: (0..scenarios).map(|_| ScenarioSolution::zeros(nodes)).collect(),
        }
    }

    pub fn check_shape(&self, prog: &StochasticProgram<T>) -> Result<(), ProgramError> {
        let n = prog.num_nodes();
        let ok = self.pc.len() == n
            && self.scenarios.len() == prog.num_scenarios()
            && self.scenarios.iter().all(|s| {
                [s.qw.len(), s.p.len(), s.q.len(), s.v.len(), s.l.len()].iter().all(|&l| l == n)
            });
        if ok {
            Ok(())
        } else {
            Err(ProgramError::Shape(format!("expected {n} nodes and {} scenarios", prog.num_scenarios())))
        }
    }

    /// Real power drawn at the substation in scenario `m` (per-unit).
    pub fn p0(&self, m: usize) -> T {
        self.scenarios[m].p[0]
    }

    pub fn to_file(&self, network: &Network) -> SolutionFile {
        let b = network.base();
        let ids: Vec<u32> = (0..network.len()).map(|k| network.id_of(k)).collect();
        let users = || (1..network.len()).map(|k| (k, ids[k]));
        let map = |vals: &[T], f: &dyn Fn(f64) -> f64, all: bool| -> BTreeMap<u32, f64> {
            let start = usize::from(!all);
            (start..network.len()).map(|k| (ids[k], f(vals[k].to_f64_lossy()))).collect()
        };
        let pw = |x: f64| b.power_from_pu(x);
        SolutionFile {
            pc_mw: users().map(|(k, id)| (id, pw(self.pc[k].to_f64_lossy()))).collect(),
            qc_mvar: users()
                .map(|(k, id)| (id, pw(self.pc[k].to_f64_lossy()) * network.node(k).qc_slope()))
                .collect(),
            scenarios: self
                .scenarios
                .iter()
                .map(|s| ScenarioSolutionFile {
                    qw_mvar: map(&s.qw, &pw, false),
                    p_mw: map(&s.p, &pw, true),
                    q_mvar: map(&s.q, &pw, true),
                    v_kv2: map(&s.v, &|x| b.voltage_sq_from_pu(x), true),
                    l_ka2: map(&s.l, &|x| b.current_sq_from_pu(x), false),
                    p0_plus_mw: pw(s.p0_plus.to_f64_lossy()),
                    p0_minus_mw: pw(s.p0_minus.to_f64_lossy()),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &SolutionFile, network: &Network) -> Result<Self, ProgramError> {
        let b = network.base();
        let n = network.len();
        let fill = |src: &BTreeMap<u32, f64>, f: &dyn Fn(f64) -> f64, root_default: Option<f64>| {
            let mut out = vec![T::zero(); n];
            for k in 0..n {
                let id = network.id_of(k);
                let val = match (src.get(&id), k, root_default) {
                    (Some(&v), _, _) => f(v),
                    (None, 0, Some(d)) => d,
                    (None, 0, None) => 0.0,
                    (None, _, _) => return Err(ProgramError::Shape(format!("node {id} missing"))),
                };
                out[k] = T::of(val);
            }
            Ok(out)
        };
        let pu = |x: f64| b.power_to_pu(x);
        let mut pc_map = file.pc_mw.clone();
        pc_map.entry(0).or_insert(0.0);
        let scenarios = file
            .scenarios
            .iter()
            .map(|s| {
                let mut qw = s.qw_mvar.clone();
                qw.entry(0).or_insert(0.0);
                let mut l = s.l_ka2.clone();
                l.entry(0).or_insert(0.0);
                Ok(ScenarioSolution {
                    qw: fill(&qw, &pu, None)?,
                    p: fill(&s.p_mw, &pu, None)?,
                    q: fill(&s.q_mvar, &pu, None)?,
                    v: fill(&s.v_kv2, &|x| b.voltage_sq_to_pu(x), Some(network.v0_pu()))?,
                    l: fill(&l, &|x| b.current_sq_to_pu(x), None)?,
                    p0_plus: T::of(pu(s.p0_plus_mw)),
                    p0_minus: T::of(pu(s.p0_minus_mw)),
                })
            })
            .collect::<Result<Vec<_>, ProgramError>>()?;
        Ok(Self {
            pc: fill(&pc_map, &pu, None)?,
            scenarios,
        })
    }
}
