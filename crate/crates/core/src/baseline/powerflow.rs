use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::network::Network;
use crate::scalar::Scalar;

pub const SWEEP_TOL: f64 = 1e-10;
pub const SWEEP_MAX_ITERS: usize = 200;

/// Per-unit operating point by dense node index. Root entries hold the
/// substation injection `P0`, `Q0` and `v0`; `l[0]` is unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PowerFlowResult<T: Scalar> {
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub v: Vec<T>,
    pub l: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest residual of the balance, voltage-drop and current equations.
    pub max_residual: f64,
}

impl<T: Scalar> PowerFlowResult<T> {
    /// Real power lost in the lines, per-unit.
    pub fn losses(&self, network: &Network) -> T {
        (1..network.len())
            .map(|k| T::of(network.pu_line(k).expect("user nodes have a line").r) * self.l[k])
            .sum()
    }

    /// `max_i |V_i − V0| / V0` over the user nodes.
    pub fn max_deviation(&self) -> f64 {
        let v0 = self.v[0].to_f64_lossy().sqrt();
        self.v[1..]
            .iter()
            .map(|v| (v.to_f64_lossy().max(0.0).sqrt() - v0).abs() / v0)
            .fold(0.0, f64::max)
    }
}

struct Pu<T> {
    r: T,
    x: T,
    p_net: T,
    q_net: T,
    q_s: T,
}

/// Backward/forward sweep on the branch-flow equations with the current
/// equation tight. Inputs are per-unit by dense index (root entries ignored).
/// Stops when no squared voltage moves by more than `tol`; a run that hits
/// `max_iters` or leaves the physical region returns its last iterate with
/// `converged = false`.
pub fn radial_powerflow<T: Scalar>(
    network: &Network,
    pc: &[T],
    qw: &[T],
    w: &[T],
    tol: T,
    max_iters: usize,
) -> Result<PowerFlowResult<T>, BaselineError> {
    let n = network.len();
    for (what, got) in [("pc", pc.len()), ("qw", qw.len()), ("w", w.len())] {
        if got != n {
            return Err(BaselineError::Shape(format!("{what} has {got} entries, expected {n}")));
        }
    }
    let data: Vec<Pu<T>> = (0..n)
        .map(|k| {
            let node = network.pu_node(k);
            let line = network.pu_line(k).unwrap_or(crate::network::PuLine { r: 0.0, x: 0.0, l_max: 0.0 });
            Pu {
                r: T::of(line.r),
                x: T::of(line.x),
                p_net: T::of(node.p_l) + pc[k] - w[k],
                q_net: T::of(node.q_l) + T::of(node.qc_slope) * pc[k] - qw[k],
                q_s: T::of(node.q_s),
            }
        })
        .collect();
    let v0 = T::of(network.v0_pu());
    let mut p = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    let mut v = vec![v0; n];
    let mut l = vec![T::zero(); n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        backward(network, &data, &v, &mut p, &mut q, &mut l);
        let mut change = T::zero();
        for &k in &network.order()[1..] {
            let parent = network.parent(k).expect("user nodes have a parent");
            let d = &data[k];
            let next = v[parent] - T::two() * (d.r * p[k] + d.x * q[k]) - (d.r * d.r + d.x * d.x) * l[k];
            change = change.max((next - v[k]).abs());
            v[k] = next;
        }
        if !v.iter().all(|x| *x > T::zero() && x.is_finite()) {
            break;
        }
        if change < tol {
            converged = true;
            break;
        }
    }
    // Flows consistent with the final voltages.
    backward(network, &data, &v, &mut p, &mut q, &mut l);
    let max_residual = residual(network, &data, &p, &q, &v, &l);
    Ok(PowerFlowResult {
        p,
        q,
        v,
        l,
        converged,
        iterations,
        max_residual,
    })
}

fn backward<T: Scalar>(network: &Network, data: &[Pu<T>], v: &[T], p: &mut [T], q: &mut [T], l: &mut [T]) {
    for &k in network.order().iter().rev() {
        let d = &data[k];
        let (mut pk, mut qk) = if k == 0 {
            (T::zero(), T::zero())
        } else {
            (d.p_net, d.q_net - d.q_s * v[k])
        };
        for &j in network.children(k) {
            pk = pk + p[j] + data[j].r * l[j];
            qk = qk + q[j] + data[j].x * l[j];
        }
        p[k] = pk;
        q[k] = qk;
        if k != 0 {
            l[k] = (pk * pk + qk * qk) / v[k];
        }
    }
}

fn residual<T: Scalar>(network: &Network, data: &[Pu<T>], p: &[T], q: &[T], v: &[T], l: &[T]) -> f64 {
    let mut worst = T::zero();
    for &k in &network.order()[1..] {
        let parent = network.parent(k).expect("user nodes have a parent");
        let d = &data[k];
        let drop = v[parent] - v[k] - T::two() * (d.r * p[k] + d.x * q[k]) - (d.r * d.r + d.x * d.x) * l[k];
        let cone = v[k] * l[k] - p[k] * p[k] - q[k] * q[k];
        worst = worst.max(drop.abs()).max(cone.abs());
    }
    worst.to_f64_lossy()
}
