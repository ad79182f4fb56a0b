use serde::{Deserialize, Serialize};

use super::{CostModel, Solution, StochasticProgram};
use crate::scalar::{compensated_sum, Scalar};

/// Objective terms in physical units: monetary for utility and cost, MW for
/// losses. `total` adds them with the loss weight, as the problem states it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub negative_utility: f64,
    pub provision_cost: f64,
    pub expected_losses_mw: f64,
    pub k_loss: f64,
    pub total: f64,
}

pub fn objective_value<T: Scalar>(prog: &StochasticProgram<T>, sol: &Solution<T>) -> ObjectiveBreakdown {
    let s = prog.s_base().to_f64_lossy();
    let f = |v: T| v.to_f64_lossy();
    let n = prog.num_nodes();
    let negative_utility = compensated_sum((1..n).map(|k| {
        let d = prog.node(k);
        f(d.k_u) * (f(sol.pc[k]) - f(d.pc_max)).powi(2)
    }));
    let cost = &prog.objective_config().cost;
    let provision_cost = compensated_sum(sol.scenarios.iter().enumerate().map(|(m, sc)| {
        let pi = f(prog.pi(m));
        match cost {
            CostModel::PiecewiseLinear { a, b } => pi * (a * f(sc.p0_plus) * s - b * f(sc.p0_minus) * s),
            other => pi * other.smooth_value(f(sc.p[0]) * s),
        }
    }));
    let expected_losses_mw = compensated_sum(sol.scenarios.iter().enumerate().flat_map(|(m, sc)| {
        let pi = f(prog.pi(m));
        (1..n).map(move |k| pi * f(prog.node(k).r) * f(sc.l[k]) * s)
    }));
    let k_loss = prog.objective_config().k_loss;
    ObjectiveBreakdown {
        negative_utility,
        provision_cost,
        expected_losses_mw,
        k_loss,
        total: negative_utility + provision_cost + k_loss * expected_losses_mw,
    }
}

/// Worst violation per constraint family, in per-unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub p_balance: f64,
    pub q_balance: f64,
    pub voltage_drop: f64,
    pub root_balance: f64,
    pub root_split: f64,
    pub p0_sign: f64,
    /// `max (P² + Q² − v·l)`, positive when the cone is violated.
    pub cone: f64,
    /// `max (v·l − P² − Q²)`: relaxation gap, reported but not a violation.
    pub socp_gap: f64,
    pub voltage_band: f64,
    pub current_cap: f64,
    pub pc_box: f64,
    pub qw_box: f64,
    pub tol: f64,
    pub pass: bool,
}

impl AuditReport {
    pub fn worst(&self) -> f64 {
        [
            self.p_balance,
            self.q_balance,
            self.voltage_drop,
            self.root_balance,
            self.root_split,
            self.p0_sign,
            self.cone,
            self.voltage_band,
            self.current_cap,
            self.pc_box,
            self.qw_box,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn feasibility_audit<T: Scalar>(prog: &StochasticProgram<T>, sol: &Solution<T>, tol: f64) -> AuditReport {
    let f = |v: T| v.to_f64_lossy();
    let net = prog.network();
    let n = prog.num_nodes();
    let (v_min, v_max) = prog.v_bounds();
    let (v_min, v_max, v0) = (f(v_min), f(v_max), f(prog.v0()));
    let mut rep = AuditReport {
        p_balance: 0.0,
        q_balance: 0.0,
        voltage_drop: 0.0,
        root_balance: 0.0,
        root_split: 0.0,
        p0_sign: 0.0,
        cone: 0.0,
        socp_gap: f64::NEG_INFINITY,
        voltage_band: 0.0,
        current_cap: 0.0,
        pc_box: 0.0,
        qw_box: 0.0,
        tol,
        pass: false,
    };
    let pc = |k: usize| match prog.pc_fixed() {
        Some(fixed) => f(fixed[k]),
        None => f(sol.pc[k]),
    };
    for k in 1..n {
        let d = prog.node(k);
        let p = pc(k);
        rep.pc_box = rep.pc_box.max(f(d.pc_min) - p).max(p - f(d.pc_max));
    }
    for (m, sc) in sol.scenarios.iter().enumerate() {
        let inflow = |k: usize| -> (f64, f64) {
            net.children(k).iter().fold((0.0, 0.0), |(ap, aq), &j| {
                let dj = prog.node(j);
                (ap + f(sc.p[j]) + f(dj.r) * f(sc.l[j]), aq + f(sc.q[j]) + f(dj.x) * f(sc.l[j]))
            })
        };
        let (p0_flow, _) = inflow(0);
        rep.root_balance = rep.root_balance.max((f(sc.p[0]) - p0_flow).abs());
        if prog.objective_config().cost.is_piecewise() {
            rep.root_split = rep.root_split.max((f(sc.p[0]) - (f(sc.p0_plus) - f(sc.p0_minus))).abs());
            rep.p0_sign = rep.p0_sign.max(-f(sc.p0_plus)).max(-f(sc.p0_minus));
        }
        for k in 1..n {
            let d = prog.node(k);
            let (pin, qin) = inflow(k);
            let (p, q, v, l, qw) = (f(sc.p[k]), f(sc.q[k]), f(sc.v[k]), f(sc.l[k]), f(sc.qw[k]));
            let pck = pc(k);
            let p_res = p - pin - (f(d.p_l) + pck - f(prog.w(m, k)));
            let q_res = q - qin - (f(d.q_l) + f(d.qc_slope) * pck - qw - f(d.q_s) * v);
            let parent = net.parent(k).expect("non-root");
            let v_parent = if parent == 0 { v0 } else { f(sc.v[parent]) };
            let (r, x) = (f(d.r), f(d.x));
            let drop = v_parent - v - 2.0 * (r * p + x * q) - (r * r + x * x) * l;
            rep.p_balance = rep.p_balance.max(p_res.abs());
            rep.q_balance = rep.q_balance.max(q_res.abs());
            rep.voltage_drop = rep.voltage_drop.max(drop.abs());
            let slack = v * l - p * p - q * q;
            rep.cone = rep.cone.max(-slack);
            rep.socp_gap = rep.socp_gap.max(slack);
            rep.voltage_band = rep.voltage_band.max(v_min - v).max(v - v_max);
            rep.current_cap = rep.current_cap.max(-l).max(l - f(d.l_max));
            let qmax = f(prog.qw_max(m, k));
            rep.qw_box = rep.qw_box.max(qw.abs() - qmax);
        }
    }
    if rep.socp_gap == f64::NEG_INFINITY {
        rep.socp_gap = 0.0;
    }
    rep.pass = rep.worst() <= tol;
    rep
}

/// `max_m min(P0⁺, P0⁻)`; zero at any optimum when `a > b`.
pub fn complementarity_check<T: Scalar>(sol: &Solution<T>) -> f64 {
    sol.scenarios
        .iter()
        .map(|s| s.p0_plus.min(s.p0_minus).to_f64_lossy())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{ObjectiveConfig, ScenarioSolution};
    use crate::scenario::{Scenario, ScenarioSet};
    use proptest::prelude::*;

    fn program(net: &crate::network::Network, w: &[Vec<f64>], pi: &[f64]) -> StochasticProgram<f64> {
        let ids = net.user_ids();
        let scen = w.iter().zip(pi).map(|(w, &pi)| Scenario { pi, w_mw: w.clone() }).collect();
        let set = ScenarioSet::new(ids, scen, 0).unwrap();
        let cfg = ObjectiveConfig { cost: CostModel::PiecewiseLinear { a: 3.0, b: 1.0 }, k_loss: 1.0 };
        StochasticProgram::assemble(net, &set, &cfg).unwrap()
    }

    fn random_solution(prog: &StochasticProgram<f64>, seed: u64) -> Solution<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = prog.num_nodes();
        let mut sol = Solution::zeros(n, prog.num_scenarios());
        sol.pc = (0..n).map(|_| rng.random_range(0.0..0.05)).collect();
        for s in &mut sol.scenarios {
            for k in 0..n {
                s.l[k] = rng.random_range(0.0..1.0);
                s.p[k] = rng.random_range(-1.0..1.0);
            }
            s.p0_plus = rng.random_range(0.0..1.0);
            s.p0_minus = rng.random_range(0.0..1.0);
        }
        sol
    }

    #[test]
    fn zero_solution_with_no_elastic_load_costs_nothing() {
        let mut spec = crate::network::day_type_feeder();
        spec.trunk_len = 3;
        spec.laterals.clear();
        spec.pv.overrides.clear();
        spec.pc_max_mw = 0.0;
        let net = spec.build().unwrap();
        let set = ScenarioSet::equiprobable(net.user_ids(), vec![vec![0.0; 3]], 0).unwrap();
        let prog = StochasticProgram::<f64>::assemble(&net, &set, &ObjectiveConfig::default()).unwrap();
        let sol = Solution::zeros(4, 1);
        assert_eq!(objective_value(&prog, &sol).total, 0.0);
    }

    #[test]
    fn utility_vanishes_at_its_peak() {
        let net = crate::network::tests::chain(2);
        let prog = program(&net, &[vec![0.0, 0.0]], &[1.0]);
        let mut sol = Solution::zeros(3, 1);
        sol.pc = vec![0.0, 0.05, 0.05];
        let obj = objective_value(&prog, &sol);
        assert_eq!(obj.negative_utility, 0.0);
        assert_eq!(obj.total, 0.0);
    }

    #[test]
    fn complementarity_examples() {
        let mut sol = Solution::<f64>::zeros(1, 1);
        sol.scenarios[0] = ScenarioSolution { p0_plus: 3.0, ..ScenarioSolution::zeros(1) };
        assert_eq!(complementarity_check(&sol), 0.0);
        sol.scenarios[0].p0_plus = 1.0;
        sol.scenarios[0].p0_minus = 0.2;
        assert_eq!(complementarity_check(&sol), 0.2);
    }

    #[test]
    fn voltage_violation_is_flagged() {
        let net = crate::network::tests::chain(1);
        let prog = program(&net, &[vec![0.0]], &[1.0]);
        let mut sol = Solution::zeros(2, 1);
        sol.scenarios[0].v = vec![1.0, 1.1f64.powi(2)];
        let rep = feasibility_audit(&prog, &sol, 1e-6);
        assert!(!rep.pass);
        assert!((rep.voltage_band - (1.1f64.powi(2) - 1.05f64.powi(2))).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn scenario_permutation_and_splitting(seed in any::<u64>()) {
            let net = crate::network::tests::chain(3);
            let w = vec![vec![0.0, 0.01, 0.02], vec![0.05, 0.0, 0.0], vec![0.03, 0.03, 0.03]];
            let pi = [0.2, 0.5, 0.3];
            let prog = program(&net, &w, &pi);
            let sol = random_solution(&prog, seed);
            let base = objective_value(&prog, &sol).total;

            let order = [2usize, 0, 1];
            let pw: Vec<Vec<f64>> = order.iter().map(|&m| w[m].clone()).collect();
            let pp: Vec<f64> = order.iter().map(|&m| pi[m]).collect();
            let permuted = program(&net, &pw, &pp);
            let mut psol = sol.clone();
            psol.scenarios = order.iter().map(|&m| sol.scenarios[m].clone()).collect();
            prop_assert!((objective_value(&permuted, &psol).total - base).abs() <= 1e-12);

            let mut sw = w.clone();
            sw.push(w[1].clone());
            let sp = [0.2, 0.25, 0.3, 0.25];
            let split = program(&net, &sw, &sp);
            let mut ssol = sol.clone();
            ssol.scenarios.push(sol.scenarios[1].clone());
            prop_assert!((objective_value(&split, &ssol).total - base).abs() <= 1e-12);
        }
    }
}
