//! Decentralized ADMM over per-node agents.
//!
//! Each iteration runs three synchronous phases: every `(node, scenario)`
//! block solves its equality-constrained QP (`x`), every node projects onto
//! its cone/box set (`z`), and every multiplier takes a dual ascent step.
//! Blocks exchange data only with their parent and children.

mod state;
mod updates;


use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closedform::ClosedFormError;
use crate::network::Network;
use crate::program::{
    complementarity_check, feasibility_audit, objective_value, AuditReport, ObjectiveBreakdown, Solution,
    SolutionFile, StochasticProgram,
};
use crate::scalar::Scalar;

pub use state::{init_state, AdmmState, InitPolicy, ScenarioX, ScenarioY, ScenarioZ};
pub use updates::{
    for_each_coupling, multiplier_update, pc_block, x_block, x_block_instance, x_update, z_block, z_update,
    AccessLog, Coupling, Recorder, Silent, XBlock,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdmmError {
    #[error("closed-form update failed at node {node}, scenario {scenario}: {source}")]
    Kernel {
        node: u32,
        scenario: usize,
        #[source]
        source: ClosedFormError,
    },
    #[error("invalid solver configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoPolicy {
    Fixed,
    /// Double when `r > 10 s`, halve when `s > 10 r`.
    #[default]
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub rho: f64,
    pub rho_policy: RhoPolicy,
    pub eps_primal: f64,
    pub eps_dual: f64,
    /// Largest accepted `v·l − P² − Q²` (pu²) at a declared convergence.
    pub socp_gap_tol: f64,
    pub max_iters: usize,
    pub init: InitPolicy,
    pub seed: u64,
    /// Thread count for the update phases; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 100.0,
            rho_policy: RhoPolicy::Adaptive,
            eps_primal: 1e-5,
            eps_dual: 1e-5,
            socp_gap_tol: 1e-3,
            max_iters: 20_000,
            init: InitPolicy::Random,
            seed: 0,
            workers: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), AdmmError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.rho) {
            return Err(AdmmError::Config("rho must be positive".into()));
        }
        if !(positive(self.eps_primal) && positive(self.eps_dual) && positive(self.socp_gap_tol)) {
            return Err(AdmmError::Config("tolerances must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(AdmmError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }
}

/// One row of the convergence trace. `rho` is the penalty used in that
/// iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub r: f64,
    pub s: f64,
    pub objective: f64,
    pub gap: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub x_secs: f64,
    pub z_secs: f64,
    pub multiplier_secs: f64,
    pub residual_secs: f64,
}

#[derive(Debug, Clone)]
pub struct SolveReport<T> {
    pub solution: Solution<T>,
    pub trace: Vec<TraceRow>,
    pub iterations: usize,
    pub converged: bool,
    pub final_rho: f64,
    pub socp_gap: f64,
    pub objective: ObjectiveBreakdown,
    pub audit: AuditReport,
    pub complementarity: f64,
    pub timing: PhaseTiming,
}

/// JSON form of a [`SolveReport`] in physical units. Timing is kept out so
/// that reruns compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReportFile {
    pub converged: bool,
    pub iterations: usize,
    pub final_rho: f64,
    pub socp_gap: f64,
    pub complementarity: f64,
    pub objective: ObjectiveBreakdown,
    pub audit: AuditReport,
    pub solution: SolutionFile,
}

impl<T: Scalar> SolveReport<T> {
    pub fn to_file(&self, net: &Network) -> SolveReportFile {
        SolveReportFile {
            converged: self.converged,
            iterations: self.iterations,
            final_rho: self.final_rho,
            socp_gap: self.socp_gap,
            complementarity: self.complementarity,
            objective: self.objective,
            audit: self.audit.clone(),
            solution: self.solution.to_file(net),
        }
    }
}

/// Tolerance of the audit attached to every report.
pub const REPORT_AUDIT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub r: f64,
    pub s: f64,
}

/// Consensus variables kept from the previous iteration for the dual residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSnapshot<T> {
    pub z: Vec<ScenarioZ<T>>,
    pub pc: Vec<T>,
}

impl<T: Scalar> ZSnapshot<T> {
    pub fn of(state: &AdmmState<T>) -> Self {
        Self {
            z: state.z.clone(),
            pc: state.pc.clone(),
        }
    }
}

/// Primal residual `‖Ax + Bz − c‖` and dual residual `ρ‖AᵀB(z − z_prev)‖`.
///
/// Every `x` entry sits in exactly one coupling, so `‖AᵀBΔz‖²` weights each
/// consensus variable's change by the number of couplings it appears in: two
/// for `P̃`, `Q̃`, `l̃`, `1 + |C_i|` for `ṽ_i`, `M` for `p̃c`, one otherwise.
pub fn residuals<T: Scalar>(prog: &StochasticProgram<T>, state: &AdmmState<T>, prev: &ZSnapshot<T>) -> Residuals {
    let net = prog.network();
    let n = prog.num_nodes();
    let piecewise = prog.objective_config().cost.is_piecewise();
    let per_scenario: Vec<(f64, f64)> = state
        .x
        .par_iter()
        .zip(state.z.par_iter())
        .zip(prev.z.par_iter())
        .map(|((xm, zm), pm)| {
            let mut r2 = 0.0;
            for_each_coupling(prog, xm, zm, &state.pc, |_, _, xv, zv| {
                let d = (xv - zv).to_f64_lossy();
                r2 += d * d;
            });
            let sq = |a: T, b: T| {
                let d = (a - b).to_f64_lossy();
                d * d
            };
            let mut s2 = 0.0;
            for k in 1..n {
                s2 += 2.0 * (sq(zm.p[k], pm.p[k]) + sq(zm.q[k], pm.q[k]) + sq(zm.l[k], pm.l[k]));
                s2 += (1 + net.children(k).len()) as f64 * sq(zm.v[k], pm.v[k]);
                s2 += sq(zm.qw[k], pm.qw[k]);
            }
            if piecewise {
                s2 += sq(zm.p0_plus, pm.p0_plus) + sq(zm.p0_minus, pm.p0_minus);
            }
            (r2, s2)
        })
        .collect();
    let mut r2 = 0.0;
    let mut s2 = 0.0;
    for (a, b) in per_scenario {
        r2 += a;
        s2 += b;
    }
    let m = state.num_scenarios() as f64;
    for k in 1..n {
        let d = (state.pc[k] - prev.pc[k]).to_f64_lossy();
        s2 += m * d * d;
    }
    Residuals {
        r: r2.sqrt(),
        s: state.rho.to_f64_lossy() * s2.sqrt(),
    }
}

/// Residual-balancing penalty update.
pub fn adapt_rho<T: Scalar>(rho: T, r: f64, s: f64) -> T {
    if r > 10.0 * s {
        rho * T::two()
    } else if s > 10.0 * r {
        rho / T::two()
    } else {
        rho
    }
}

/// `max_{i,m} (ṽ l̃ − P̃² − Q̃²)` over the consensus variables.
pub fn socp_gap<T: Scalar>(state: &AdmmState<T>) -> f64 {
    let mut gap = 0.0f64;
    for z in &state.z {
        for k in 1..z.p.len() {
            let g = z.v[k] * z.l[k] - z.p[k] * z.p[k] - z.q[k] * z.q[k];
            gap = gap.max(g.to_f64_lossy());
        }
    }
    gap
}

/// The consensus side of the state as a [`Solution`]. Substation quantities
/// are rebuilt from the children's flows.
pub fn export_solution<T: Scalar>(prog: &StochasticProgram<T>, state: &AdmmState<T>) -> Solution<T> {
    let net = prog.network();
    let n = prog.num_nodes();
    let piecewise = prog.objective_config().cost.is_piecewise();
    let mut sol = Solution::zeros(n, prog.num_scenarios());
    sol.pc.copy_from_slice(&state.pc);
    sol.pc[0] = T::zero();
    for (out, z) in sol.scenarios.iter_mut().zip(&state.z) {
        for k in 1..n {
            out.p[k] = z.p[k];
            out.q[k] = z.q[k];
            out.v[k] = z.v[k];
            out.l[k] = z.l[k];
            out.qw[k] = z.qw[k];
        }
        let (mut p0, mut q0) = (T::zero(), T::zero());
        for &j in net.children(0) {
            let line = prog.node(j);
            p0 = p0 + z.p[j] + line.r * z.l[j];
            q0 = q0 + z.q[j] + line.x * z.l[j];
        }
        out.p[0] = p0;
        out.q[0] = q0;
        out.v[0] = prog.v0();
        if piecewise {
            out.p0_plus = z.p0_plus;
            out.p0_minus = z.p0_minus;
        } else {
            out.p0_plus = p0.max(T::zero());
            out.p0_minus = (-p0).max(T::zero());
        }
    }
    sol
}

pub fn solve<T: Scalar>(prog: &StochasticProgram<T>, config: &SolverConfig) -> Result<SolveReport<T>, AdmmError> {
    config.validate()?;
    match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| AdmmError::Config(e.to_string()))?;
            pool.install(|| run(prog, config))
        }
        None => run(prog, config),
    }
}

fn run<T: Scalar>(prog: &StochasticProgram<T>, config: &SolverConfig) -> Result<SolveReport<T>, AdmmError> {
    let mut state = init_state(prog, T::of(config.rho), config.init, config.seed);
    let mut trace = Vec::new();
    let mut timing = [Duration::ZERO; 4];
    let mut converged = false;
    let mut gap = f64::INFINITY;
    while state.iteration < config.max_iters {
        let t0 = Instant::now();
        x_update(prog, &mut state)?;
        let t1 = Instant::now();
        let prev = ZSnapshot::of(&state);
        z_update(prog, &mut state)?;
        let t2 = Instant::now();
        multiplier_update(prog, &mut state);
        let t3 = Instant::now();
        let res = residuals(prog, &state, &prev);
        gap = socp_gap(&state);
        let objective = objective_value(prog, &export_solution(prog, &state)).total;
        timing[0] += t1 - t0;
        timing[1] += t2 - t1;
        timing[2] += t3 - t2;
        timing[3] += t3.elapsed();

        state.iteration += 1;
        let rho = state.rho.to_f64_lossy();
        trace.push(TraceRow {
            iter: state.iteration,
            r: res.r,
            s: res.s,
            objective,
            gap,
            rho,
        });
        if res.r <= config.eps_primal && res.s <= config.eps_dual && gap <= config.socp_gap_tol {
            converged = true;
            break;
        }
        if config.rho_policy == RhoPolicy::Adaptive {
            state.rho = adapt_rho(state.rho, res.r, res.s);
        }
    }
    let solution = export_solution(prog, &state);
    Ok(SolveReport {
        objective: objective_value(prog, &solution),
        audit: feasibility_audit(prog, &solution, REPORT_AUDIT_TOL),
        complementarity: complementarity_check(&solution),
        solution,
        iterations: state.iteration,
        converged,
        final_rho: state.rho.to_f64_lossy(),
        socp_gap: if gap.is_finite() { gap } else { 0.0 },
        trace,
        timing: PhaseTiming {
            x_secs: timing[0].as_secs_f64(),
            z_secs: timing[1].as_secs_f64(),
            multiplier_secs: timing[2].as_secs_f64(),
            residual_secs: timing[3].as_secs_f64(),
        },
    })
}
