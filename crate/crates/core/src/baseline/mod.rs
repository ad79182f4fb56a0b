//! Reference points for the stochastic dispatch: the local volt/VAR rule,
//! an exact radial power flow to evaluate any reactive schedule, and the
//! online re-solve with the first stage pinned.

mod policy;
mod powerflow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{solve, AdmmError, SolverConfig};
use crate::program::{ObjectiveBreakdown, ProgramError, Solution, StochasticProgram};
use crate::scalar::Scalar;
use crate::scenario::{ScenarioError, ScenarioSet};

pub use policy::{local_policy_qw, LocalMeasurements, PolicyParams};
pub use powerflow::{radial_powerflow, PowerFlowResult, SWEEP_MAX_ITERS, SWEEP_TOL};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("line {node} has zero resistance; the voltage-oriented setpoint is undefined")]
    ZeroResistance { node: u32 },
    #[error("policy weight K = {k} is not finite")]
    BadPolicy { k: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Program(#[from] ProgramError),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Audit tolerance separating a feasible online solve from an infeasible one.
pub const ONLINE_AUDIT_TOL: f64 = 1e-4;

/// An unconverged solve whose best `max(r, s)` over the final quarter of the
/// trace is above this fraction of the best before it counts as stalled.
pub const PLATEAU_RATIO: f64 = 0.5;

pub const INFEASIBILITY_RULE: &str = "infeasible: converged but the feasibility audit exceeds 1e-4, \
or max_iters reached while the best max(r, s) of the final quarter of the trace is above half the best before it; \
unresolved: max_iters reached while still improving";

/// Where the reactive setpoints come from during [`evaluate_policy`].
#[derive(Debug, Clone, Copy)]
pub enum QwSource<'a, T> {
    Local(PolicyParams),
    /// Per-unit `qw` by test scenario and dense node index.
    Given(&'a [Vec<T>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub deviation: f64,
    pub cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    /// Probability-weighted line losses over the scenarios whose power flow
    /// converged, renormalized to their total probability.
    pub expected_losses_mw: f64,
    pub max_deviation: f64,
    /// `max_i |V_i − V0|/V0` per test scenario; `None` when the sweep failed.
    pub per_scenario_max_deviation: Vec<Option<f64>>,
    /// Fraction of evaluated scenarios whose worst deviation is at most `deviation`.
    pub cdf: Vec<CdfPoint>,
    pub not_converged: usize,
}

/// Empirical distribution function of `samples`, one point per distinct value.
pub fn empirical_cdf(samples: &[f64]) -> Vec<CdfPoint> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, &d) in sorted.iter().enumerate() {
        let cumulative = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.deviation == d => last.cumulative = cumulative,
            _ => out.push(CdfPoint { deviation: d, cumulative }),
        }
    }
    out
}

/// Runs the exact power flow on every test scenario with `pc` pinned and the
/// reactive setpoints from `source`, and summarizes losses and voltage swings
/// (the root is excluded from the deviation).
pub fn evaluate_policy<T: Scalar>(
    program: &StochasticProgram<T>,
    pc_fixed: &[T],
    source: QwSource<'_, T>,
    test: &ScenarioSet,
) -> Result<PolicyMetrics, BaselineError> {
    let prog = program.with_scenarios(test)?;
    let net = prog.network();
    let n = net.len();
    if pc_fixed.len() != n {
        return Err(BaselineError::Shape(format!("pc has {} entries, expected {n}", pc_fixed.len())));
    }
    if let QwSource::Given(qw) = source {
        if qw.len() != test.len() || qw.iter().any(|q| q.len() != n) {
            return Err(BaselineError::Shape("qw must be scenarios × nodes".into()));
        }
    }
    let flows: Vec<PowerFlowResult<T>> = (0..test.len())
        .into_par_iter()
        .map(|m| {
            let w: Vec<T> = (0..n).map(|k| prog.w(m, k)).collect();
            let qw: Vec<T> = match source {
                QwSource::Given(qw) => qw[m].clone(),
                QwSource::Local(params) => (0..n)
                    .map(|k| {
                        if k == 0 {
                            return Ok(T::zero());
                        }
                        let node = prog.node(k);
                        let meas = LocalMeasurements {
                            w: w[k].to_f64_lossy(),
                            p_c: (node.p_l + pc_fixed[k]).to_f64_lossy(),
                            q_c: (node.q_l + node.qc_slope * pc_fixed[k]).to_f64_lossy(),
                            qw_max: prog.qw_max(m, k).to_f64_lossy(),
                        };
                        let line = net.line(k).expect("user nodes have a line");
                        local_policy_qw(net.id_of(k), line, &meas, params).map(T::of)
                    })
                    .collect::<Result<_, _>>()?,
            };
            radial_powerflow(net, pc_fixed, &qw, &w, T::of(SWEEP_TOL), SWEEP_MAX_ITERS)
        })
        .collect::<Result<_, _>>()?;

    let s_base = net.s_base_mva();
    let mut weighted = 0.0;
    let mut mass = 0.0;
    let mut devs = Vec::new();
    let mut per = Vec::with_capacity(flows.len());
    for (m, f) in flows.iter().enumerate() {
        if f.converged {
            let pi = prog.pi(m).to_f64_lossy();
            weighted += pi * f.losses(net).to_f64_lossy() * s_base;
            mass += pi;
            devs.push(f.max_deviation());
            per.push(Some(f.max_deviation()));
        } else {
            per.push(None);
        }
    }
    Ok(PolicyMetrics {
        expected_losses_mw: if mass > 0.0 { weighted / mass } else { 0.0 },
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        cdf: empirical_cdf(&devs),
        not_converged: flows.len() - devs.len(),
        per_scenario_max_deviation: per,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioStatus {
    Feasible,
    Infeasible,
    Unresolved,
}

#[derive(Debug, Clone)]
pub struct OnlineScenario<T> {
    pub status: ScenarioStatus,
    pub converged: bool,
    pub iterations: usize,
    pub final_r: f64,
    pub final_s: f64,
    pub socp_gap: f64,
    pub audit_worst: f64,
    pub objective: ObjectiveBreakdown,
    pub solution: Solution<T>,
}

#[derive(Debug, Clone)]
pub struct OnlineReport<T> {
    pub scenarios: Vec<OnlineScenario<T>>,
    pub infeasible: usize,
    pub unresolved: usize,
    pub infeasibility_rule: &'static str,
}

impl<T: Scalar> OnlineReport<T> {
    /// The re-optimized `qw` of each test scenario, ready for [`QwSource::Given`].
    pub fn qw(&self) -> Vec<Vec<T>> {
        self.scenarios.iter().map(|s| s.solution.scenarios[0].qw.clone()).collect()
    }

    /// Probability-weighted objective over the test set.
    pub fn expected_objective(&self, test: &ScenarioSet) -> f64 {
        self.scenarios
            .iter()
            .zip(test.scenarios())
            .map(|(s, sc)| sc.pi * s.objective.total)
            .sum()
    }
}

fn stalled(trace: &[crate::admm::TraceRow]) -> bool {
    let split = trace.len() - trace.len() / 4;
    if split == 0 || split == trace.len() {
        return false;
    }
    let best = |rows: &[crate::admm::TraceRow]| rows.iter().map(|t| t.r.max(t.s)).fold(f64::INFINITY, f64::min);
    best(&trace[split..]) > PLATEAU_RATIO * best(&trace[..split])
}

/// Re-solves the second stage on each test scenario separately with the
/// first-stage consumption pinned to `pc_fixed`. Objectives are per scenario
/// (probability one within its own solve).
pub fn online_second_stage<T: Scalar>(
    program: &StochasticProgram<T>,
    pc_fixed: &[T],
    test: &ScenarioSet,
    config: &SolverConfig,
) -> Result<OnlineReport<T>, BaselineError> {
    let pinned = program.clone().with_fixed_pc(pc_fixed.to_vec())?;
    let scenarios: Vec<OnlineScenario<T>> = (0..test.len())
        .into_par_iter()
        .map(|m| {
            let one = test.subset(&[m])?;
            let prog = pinned.with_scenarios(&one)?;
            let rep = solve(&prog, config)?;
            let last = rep.trace.last();
            let audit_worst = rep.audit.worst();
            let status = if rep.converged {
                if audit_worst <= ONLINE_AUDIT_TOL {
                    ScenarioStatus::Feasible
                } else {
                    ScenarioStatus::Infeasible
                }
            } else if stalled(&rep.trace) {
                ScenarioStatus::Infeasible
            } else {
                ScenarioStatus::Unresolved
            };
            Ok(OnlineScenario {
                status,
                converged: rep.converged,
                iterations: rep.iterations,
                final_r: last.map_or(0.0, |t| t.r),
                final_s: last.map_or(0.0, |t| t.s),
                socp_gap: rep.socp_gap,
                audit_worst,
                objective: rep.objective,
                solution: rep.solution,
            })
        })
        .collect::<Result<_, BaselineError>>()?;
    let count = |s: ScenarioStatus| scenarios.iter().filter(|x| x.status == s).count();
    Ok(OnlineReport {
        infeasible: count(ScenarioStatus::Infeasible),
        unresolved: count(ScenarioStatus::Unresolved),
        scenarios,
        infeasibility_rule: INFEASIBILITY_RULE,
    })
}
