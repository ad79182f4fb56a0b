//! The three update phases. Every kernel reads neighbour data only through an
//! [`AccessLog`], which records the owning node of each read so the message
//! pattern can be checked.

use std::cell::RefCell;

use rayon::prelude::*;

use super::state::{AdmmState, ScenarioX, ScenarioY, ScenarioZ};
use super::AdmmError;
use crate::closedform::roots::bracketed_root;
use crate::closedform::{
    box_project, positive_part, project_flow_block, solve_equality_qp, solve_equality_qp_into, update_pc_tilde, EqQpInstance,
    EqQpWork, FlowBlockInput,
};
use crate::program::StochasticProgram;
use crate::scalar::Scalar;

pub trait AccessLog {
    fn touch(&self, owner: usize);
}

/// Discards all records.
pub struct Silent;

impl AccessLog for Silent {
    #[inline(always)]
    fn touch(&self, _: usize) {}
}

/// Keeps the owners of every read in order.
#[derive(Default)]
pub struct Recorder(pub RefCell<Vec<usize>>);

impl AccessLog for Recorder {
    fn touch(&self, owner: usize) {
        self.0.borrow_mut().push(owner);
    }
}

/// Result of one `x`-update. `own` is `[P, Q, v, l, v̂, pc, qw]` for a user
/// node and `[P0, Q0, P0⁺, P0⁻]` for the root; `hats` holds `(P̂_j, Q̂_j, l̂_j)`
/// in child order.
#[derive(Debug, Clone, PartialEq)]
pub struct XBlock<T> {
    pub node: usize,
    pub own: Vec<T>,
    pub hats: Vec<[T; 3]>,
}

impl<T: Scalar> XBlock<T> {
    fn write(&self, x: &mut ScenarioX<T>, children: &[usize]) {
        let k = self.node;
        if k == 0 {
            x.p[0] = self.own[0];
            x.q[0] = self.own[1];
            x.p0_plus = self.own[2];
            x.p0_minus = self.own[3];
        } else {
            x.p[k] = self.own[0];
            x.q[k] = self.own[1];
            x.v[k] = self.own[2];
            x.l[k] = self.own[3];
            x.v_hat[k] = self.own[4];
            x.pc[k] = self.own[5];
            x.qw[k] = self.own[6];
        }
        for (&j, h) in children.iter().zip(&self.hats) {
            x.p_hat[j] = h[0];
            x.q_hat[j] = h[1];
            x.l_hat[j] = h[2];
        }
    }
}

/// The equality-constrained QP of the `x`-update at `(k, m)`, in the variable
/// order of [`XBlock`] followed by the hatted child copies.
pub fn x_block_instance<T: Scalar, L: AccessLog>(
    prog: &StochasticProgram<T>,
    z: &ScenarioZ<T>,
    y: &ScenarioY<T>,
    pc_tilde: &[T],
    rho: T,
    m: usize,
    k: usize,
    log: &L,
) -> EqQpInstance<T> {
    let mut inst = EqQpInstance {
        a_diag: Vec::new(),
        b: Vec::new(),
        c: Vec::new(),
        d: Vec::new(),
    };
    fill_x_block_instance(prog, z, y, pc_tilde, rho, m, k, log, &mut inst);
    inst
}

#[allow(clippy::too_many_arguments)]
fn fill_x_block_instance<T: Scalar, L: AccessLog>(
    prog: &StochasticProgram<T>,
    z: &ScenarioZ<T>,
    y: &ScenarioY<T>,
    pc_tilde: &[T],
    rho: T,
    m: usize,
    k: usize,
    log: &L,
    inst: &mut EqQpInstance<T>,
) {
    let net = prog.network();
    let children = net.children(k);
    let head = if k == 0 { 2 } else { 7 };
    let n = head + 3 * children.len();
    let rows = if k == 0 { 1 } else { 3 };
    let reset = |v: &mut Vec<T>, len: usize, value: T| {
        v.clear();
        v.resize(len, value);
    };
    reset(&mut inst.a_diag, n, rho);
    reset(&mut inst.b, n, T::zero());
    reset(&mut inst.c, rows * n, T::zero());
    reset(&mut inst.d, rows, T::zero());
    let EqQpInstance { b, c, d, .. } = inst;

    for (c_idx, &j) in children.iter().enumerate() {
        let base = head + 3 * c_idx;
        log.touch(j);
        let (zp, zq, zl) = (z.p[j], z.q[j], z.l[j]);
        log.touch(k);
        b[base] = y.lambda_hat[j] - rho * zp;
        b[base + 1] = y.mu_hat[j] - rho * zq;
        b[base + 2] = y.gamma_hat[j] - rho * zl;
        let line = prog.node(j);
        c[base] = -T::one();
        c[base + 2] = -line.r;
        if k != 0 {
            c[n + base + 1] = -T::one();
            c[n + base + 2] = -line.x;
        }
    }

    if k == 0 {
        log.touch(0);
        let pi = prog.pi(m);
        let (a, bp) = prog.prices_pu().unwrap_or((T::zero(), T::zero()));
        b[0] = pi * a + y.zeta_plus - rho * z.p0_plus;
        b[1] = -pi * bp + y.zeta_minus - rho * z.p0_minus;
        c[0] = T::one();
        c[1] = -T::one();
    } else {
        let node = prog.node(k);
        log.touch(k);
        b[0] = y.lambda[k] - rho * z.p[k];
        b[1] = y.mu[k] - rho * z.q[k];
        b[2] = y.omega[k] - rho * z.v[k];
        b[3] = y.gamma[k] - rho * z.l[k] + prog.k_loss_pu() * prog.pi(m) * node.r;
        b[5] = y.eta[k] - rho * pc_tilde[k];
        b[6] = y.theta[k] - rho * z.qw[k];
        let parent = net.parent(k).expect("user nodes have a parent");
        let v_parent = if parent == 0 {
            prog.v0()
        } else {
            log.touch(parent);
            z.v[parent]
        };
        log.touch(k);
        b[4] = y.omega_hat[k] - rho * v_parent;

        // P − Σ(P̂_j + r_j l̂_j) − pc = P_L − w
        c[0] = T::one();
        c[5] = -T::one();
        d[0] = node.p_l - prog.w(m, k);
        // Q − Σ(Q̂_j + x_j l̂_j) − slope·pc + qw + q_s·v = Q_L
        c[n + 1] = T::one();
        c[n + 2] = node.q_s;
        c[n + 5] = -node.qc_slope;
        c[n + 6] = T::one();
        d[1] = node.q_l;
        // v̂ − v − 2(rP + xQ) − (r² + x²)l = 0
        let row = 2 * n;
        c[row] = -T::two() * node.r;
        c[row + 1] = -T::two() * node.x;
        c[row + 2] = -T::one();
        c[row + 3] = -(node.r * node.r + node.x * node.x);
        c[row + 4] = T::one();
    }
}

/// Splits a raw QP minimizer into the [`XBlock`] layout.
fn unpack<T: Scalar>(prog: &StochasticProgram<T>, k: usize, sol: &[T]) -> XBlock<T> {
    let children = prog.network().children(k);
    let head = if k == 0 { 2 } else { 7 };
    let hats: Vec<[T; 3]> = (0..children.len())
        .map(|c| [sol[head + 3 * c], sol[head + 3 * c + 1], sol[head + 3 * c + 2]])
        .collect();
    let own = if k == 0 {
        let q0 = children
            .iter()
            .zip(&hats)
            .fold(T::zero(), |acc, (&j, h)| acc + h[1] + prog.node(j).x * h[2]);
        vec![sol[0] - sol[1], q0, sol[0], sol[1]]
    } else {
        sol[..7].to_vec()
    };
    XBlock { node: k, own, hats }
}

/// Writes a raw QP minimizer straight into the scenario's `x` arrays.
fn store<T: Scalar>(prog: &StochasticProgram<T>, k: usize, sol: &[T], x: &mut ScenarioX<T>) {
    let children = prog.network().children(k);
    let head = if k == 0 { 2 } else { 7 };
    let mut q0 = T::zero();
    for (c, &j) in children.iter().enumerate() {
        let h = &sol[head + 3 * c..head + 3 * c + 3];
        x.p_hat[j] = h[0];
        x.q_hat[j] = h[1];
        x.l_hat[j] = h[2];
        q0 = q0 + h[1] + prog.node(j).x * h[2];
    }
    if k == 0 {
        x.p[0] = sol[0] - sol[1];
        x.q[0] = q0;
        x.p0_plus = sol[0];
        x.p0_minus = sol[1];
    } else {
        x.p[k] = sol[0];
        x.q[k] = sol[1];
        x.v[k] = sol[2];
        x.l[k] = sol[3];
        x.v_hat[k] = sol[4];
        x.pc[k] = sol[5];
        x.qw[k] = sol[6];
    }
}

#[allow(clippy::too_many_arguments)]
pub fn x_block<T: Scalar, L: AccessLog>(
    prog: &StochasticProgram<T>,
    z: &ScenarioZ<T>,
    y: &ScenarioY<T>,
    pc_tilde: &[T],
    rho: T,
    m: usize,
    k: usize,
    log: &L,
) -> Result<XBlock<T>, AdmmError> {
    if k == 0 && !prog.objective_config().cost.is_piecewise() {
        return Ok(smooth_root_block(prog, z, y, rho, m, log));
    }
    let inst = x_block_instance(prog, z, y, pc_tilde, rho, m, k, log);
    let sol = solve_equality_qp(&inst).map_err(|source| AdmmError::Kernel {
        node: prog.network().id_of(k),
        scenario: m,
        source,
    })?;
    Ok(unpack(prog, k, &sol))
}

/// Root update under a smooth cost `C(P0)`: eliminating the hatted copies
/// leaves `min C(P0) + (P0 − P_free)²/(2G)`, a monotone scalar equation.
fn smooth_root_block<T: Scalar, L: AccessLog>(
    prog: &StochasticProgram<T>,
    z: &ScenarioZ<T>,
    y: &ScenarioY<T>,
    rho: T,
    m: usize,
    log: &L,
) -> XBlock<T> {
    let children = prog.network().children(0);
    let mut free: Vec<[T; 3]> = Vec::with_capacity(children.len());
    for &j in children {
        log.touch(j);
        let (zp, zq, zl) = (z.p[j], z.q[j], z.l[j]);
        log.touch(0);
        free.push([
            zp - y.lambda_hat[j] / rho,
            zq - y.mu_hat[j] / rho,
            zl - y.gamma_hat[j] / rho,
        ]);
    }
    let weights: Vec<T> = children.iter().map(|&j| T::one() + prog.node(j).r * prog.node(j).r).collect();
    let norm2: T = weights.iter().copied().sum();
    let p_free: T = children
        .iter()
        .zip(&free)
        .map(|(&j, h)| h[0] + prog.node(j).r * h[2])
        .sum();
    let pi = prog.pi(m);
    let g = norm2 / rho;
    let phi = |p0: T| (pi * prog.cost_derivative_pu(p0) + (p0 - p_free) / g, T::one() / g);
    let mut step = T::one();
    let (mut lo, mut hi) = (p_free - step, p_free + step);
    while phi(lo).0 > T::zero() {
        step = step * T::two();
        lo = p_free - step;
    }
    step = T::one();
    while phi(hi).0 < T::zero() {
        step = step * T::two();
        hi = p_free + step;
    }
    let p0 = bracketed_root(phi, lo, hi);
    let delta = (p0 - p_free) / norm2;
    let hats: Vec<[T; 3]> = children
        .iter()
        .zip(&free)
        .map(|(&j, h)| [h[0] + delta, h[1], h[2] + prog.node(j).r * delta])
        .collect();
    let q0 = children
        .iter()
        .zip(&hats)
        .fold(T::zero(), |acc, (&j, h)| acc + h[1] + prog.node(j).x * h[2]);
    XBlock {
        node: 0,
        own: vec![p0, q0, positive_part(p0), positive_part(-p0)],
        hats,
    }
}

/// `x`-update of every `(node, scenario)` block against the current `z` and
/// multipliers. Scenarios run concurrently; nodes within a scenario read only
/// the previous `z`, so their order does not matter.
pub fn x_update<T: Scalar>(prog: &StochasticProgram<T>, state: &mut AdmmState<T>) -> Result<(), AdmmError> {
    let AdmmState { x, z, y, pc, rho, .. } = state;
    let (pc, rho) = (&*pc, *rho);
    let net = prog.network();
    let smooth_root = !prog.objective_config().cost.is_piecewise();
    x.par_iter_mut()
        .zip(z.par_iter())
        .zip(y.par_iter())
        .enumerate()
        .map(|(m, ((xm, zm), ym))| {
            let mut inst = x_block_instance(prog, zm, ym, pc, rho, m, 0, &Silent);
            let mut work = EqQpWork::default();
            let mut sol = Vec::new();
            for k in 0..net.len() {
                if k == 0 && smooth_root {
                    smooth_root_block(prog, zm, ym, rho, m, &Silent).write(xm, net.children(0));
                    continue;
                }
                fill_x_block_instance(prog, zm, ym, pc, rho, m, k, &Silent, &mut inst);
                sol.clear();
                sol.resize(inst.cols(), T::zero());
                solve_equality_qp_into(&inst.a_diag, &inst.b, &inst.c, &inst.d, &mut sol, &mut work).map_err(
                    |source| AdmmError::Kernel {
                        node: net.id_of(k),
                        scenario: m,
                        source,
                    },
                )?;
                store(prog, k, &sol, xm);
            }
            Ok(())
        })
        .collect::<Vec<Result<(), AdmmError>>>()
        .into_iter()
        .collect()
}

/// `(P̃, Q̃, ṽ, l̃, q̃w)` of user node `k` in scenario `m`.
pub fn z_block<T: Scalar, L: AccessLog>(
    prog: &StochasticProgram<T>,
    x: &ScenarioX<T>,
    y: &ScenarioY<T>,
    rho: T,
    m: usize,
    k: usize,
    log: &L,
) -> Result<[T; 5], AdmmError> {
    let net = prog.network();
    let node = prog.node(k);
    let parent = net.parent(k).expect("user nodes have a parent");
    log.touch(k);
    let (p, q, v, l, qw) = (x.p[k], x.q[k], x.v[k], x.l[k], x.qw[k]);
    let (lam, mu, gam, om, th) = (y.lambda[k], y.mu[k], y.gamma[k], y.omega[k], y.theta[k]);
    log.touch(parent);
    let (ph, qh, lh) = (x.p_hat[k], x.q_hat[k], x.l_hat[k]);
    let (lamh, muh, gamh) = (y.lambda_hat[k], y.mu_hat[k], y.gamma_hat[k]);
    let mut v_sum = v + om / rho;
    for &j in net.children(k) {
        log.touch(j);
        v_sum = v_sum + x.v_hat[j] + y.omega_hat[j] / rho;
    }
    let (v_min, v_max) = prog.v_bounds();
    let input = FlowBlockInput {
        p_sum: p + ph + (lam + lamh) / rho,
        q_sum: q + qh + (mu + muh) / rho,
        v_sum,
        l_sum: l + lh + (gam + gamh) / rho,
        v_copies: 1 + net.children(k).len(),
        v_min,
        v_max,
        l_max: node.l_max,
    };
    let err = |source| AdmmError::Kernel {
        node: net.id_of(k),
        scenario: m,
        source,
    };
    let (flow, _) = project_flow_block(&input).map_err(err)?;
    let cap = prog.qw_max(m, k);
    let qw_t = box_project((th + rho * qw) / rho, -cap, cap).map_err(err)?;
    Ok([flow[0], flow[1], flow[2], flow[3], qw_t])
}

/// `p̃c` of user node `k` from every scenario's local copy.
pub fn pc_block<T: Scalar, L: AccessLog>(
    prog: &StochasticProgram<T>,
    x: &[ScenarioX<T>],
    y: &[ScenarioY<T>],
    rho: T,
    k: usize,
    log: &L,
) -> T {
    if let Some(fixed) = prog.pc_fixed() {
        return fixed[k];
    }
    log.touch(k);
    let node = prog.node(k);
    let eta: Vec<T> = y.iter().map(|ym| ym.eta[k]).collect();
    let pcm: Vec<T> = x.iter().map(|xm| xm.pc[k]).collect();
    update_pc_tilde(node.k_u, node.pc_max, node.pc_min, &eta, &pcm, rho)
}

pub fn z_update<T: Scalar>(prog: &StochasticProgram<T>, state: &mut AdmmState<T>) -> Result<(), AdmmError> {
    let AdmmState { x, z, y, pc, rho, .. } = state;
    let rho = *rho;
    let n = prog.num_nodes();
    for k in 1..n {
        pc[k] = pc_block(prog, x, y, rho, k, &Silent);
    }
    let piecewise = prog.objective_config().cost.is_piecewise();
    z.par_iter_mut()
        .zip(x.par_iter())
        .zip(y.par_iter())
        .enumerate()
        .map(|(m, ((zm, xm), ym))| {
            for k in 1..n {
                let [p, q, v, l, qw] = z_block(prog, xm, ym, rho, m, k, &Silent)?;
                zm.p[k] = p;
                zm.q[k] = q;
                zm.v[k] = v;
                zm.l[k] = l;
                zm.qw[k] = qw;
            }
            if piecewise {
                zm.p0_plus = positive_part((ym.zeta_plus + rho * xm.p0_plus) / rho);
                zm.p0_minus = positive_part((ym.zeta_minus + rho * xm.p0_minus) / rho);
            }
            Ok(())
        })
        .collect::<Vec<Result<(), AdmmError>>>()
        .into_iter()
        .collect()
}

/// Multiplier families, one per kind of coupling constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coupling {
    Lambda,
    Mu,
    Gamma,
    Omega,
    OmegaHat,
    Eta,
    Theta,
    LambdaHat,
    MuHat,
    GammaHat,
    ZetaPlus,
    ZetaMinus,
}

impl<T> ScenarioY<T> {
    pub fn slot_mut(&mut self, kind: Coupling, k: usize) -> &mut T {
        match kind {
            Coupling::Lambda => &mut self.lambda[k],
            Coupling::Mu => &mut self.mu[k],
            Coupling::Gamma => &mut self.gamma[k],
            Coupling::Omega => &mut self.omega[k],
            Coupling::OmegaHat => &mut self.omega_hat[k],
            Coupling::Eta => &mut self.eta[k],
            Coupling::Theta => &mut self.theta[k],
            Coupling::LambdaHat => &mut self.lambda_hat[k],
            Coupling::MuHat => &mut self.mu_hat[k],
            Coupling::GammaHat => &mut self.gamma_hat[k],
            Coupling::ZetaPlus => &mut self.zeta_plus,
            Coupling::ZetaMinus => &mut self.zeta_minus,
        }
    }
}

/// Calls `f(kind, node, x-side, z-side)` for every coupling constraint of one
/// scenario, in a fixed order. Voltage copies held by the root's children are
/// coupled to the constant `v0`.
pub fn for_each_coupling<T: Scalar>(
    prog: &StochasticProgram<T>,
    x: &ScenarioX<T>,
    z: &ScenarioZ<T>,
    pc: &[T],
    mut f: impl FnMut(Coupling, usize, T, T),
) {
    use Coupling::*;
    let net = prog.network();
    for k in 1..prog.num_nodes() {
        let parent = net.parent(k).expect("user nodes have a parent");
        let v_parent = if parent == 0 { prog.v0() } else { z.v[parent] };
        f(Lambda, k, x.p[k], z.p[k]);
        f(Mu, k, x.q[k], z.q[k]);
        f(Gamma, k, x.l[k], z.l[k]);
        f(Omega, k, x.v[k], z.v[k]);
        f(OmegaHat, k, x.v_hat[k], v_parent);
        f(Eta, k, x.pc[k], pc[k]);
        f(Theta, k, x.qw[k], z.qw[k]);
        f(LambdaHat, k, x.p_hat[k], z.p[k]);
        f(MuHat, k, x.q_hat[k], z.q[k]);
        f(GammaHat, k, x.l_hat[k], z.l[k]);
    }
    if prog.objective_config().cost.is_piecewise() {
        f(ZetaPlus, 0, x.p0_plus, z.p0_plus);
        f(ZetaMinus, 0, x.p0_minus, z.p0_minus);
    }
}

/// `y ← y + ρ(x − z)` on every coupling.
pub fn multiplier_update<T: Scalar>(prog: &StochasticProgram<T>, state: &mut AdmmState<T>) {
    let AdmmState { x, z, y, pc, rho, .. } = state;
    let (pc, rho) = (&*pc, *rho);
    y.par_iter_mut()
        .zip(x.par_iter())
        .zip(z.par_iter())
        .for_each(|((ym, xm), zm)| {
            for_each_coupling(prog, xm, zm, pc, |kind, k, xv, zv| {
                let slot = ym.slot_mut(kind, k);
                *slot = *slot + rho * (xv - zv);
            });
        });
}
