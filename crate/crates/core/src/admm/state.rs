use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::program::StochasticProgram;
use crate::scalar::Scalar;

/// Local physical variables of one scenario, by dense node index.
///
/// Index 0 of `p` and `q` holds the substation flow `P0`, `Q0`. The hatted
/// copies `p_hat`, `q_hat`, `l_hat` are indexed by the child they mirror but
/// belong to that child's parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioX<T> {
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub v: Vec<T>,
    pub l: Vec<T>,
    /// Each node's copy of its parent's voltage.
    pub v_hat: Vec<T>,
    pub pc: Vec<T>,
    pub qw: Vec<T>,
    pub p_hat: Vec<T>,
    pub q_hat: Vec<T>,
    pub l_hat: Vec<T>,
    pub p0_plus: T,
    pub p0_minus: T,
}

/// Consensus variables of one scenario that carry the inequality constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioZ<T> {
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub v: Vec<T>,
    pub l: Vec<T>,
    pub qw: Vec<T>,
    pub p0_plus: T,
    pub p0_minus: T,
}

/// Multipliers of one scenario, one per coupling constraint.
///
/// `lambda_hat`, `mu_hat`, `gamma_hat` are indexed by child and held by the
/// parent; `omega_hat` prices `v̂_i = ṽ_{A_i}` and is held by node `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioY<T> {
    pub lambda: Vec<T>,
    pub mu: Vec<T>,
    pub gamma: Vec<T>,
    pub omega: Vec<T>,
    pub omega_hat: Vec<T>,
    pub eta: Vec<T>,
    pub theta: Vec<T>,
    pub lambda_hat: Vec<T>,
    pub mu_hat: Vec<T>,
    pub gamma_hat: Vec<T>,
    pub zeta_plus: T,
    pub zeta_minus: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState<T> {
    pub x: Vec<ScenarioX<T>>,
    pub z: Vec<ScenarioZ<T>>,
    /// Scenario-independent consumption `p̃c`, by node.
    pub pc: Vec<T>,
    pub y: Vec<ScenarioY<T>>,
    pub rho: T,
    pub iteration: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitPolicy {
    Zeros,
    /// Uniform draws on `[0, 1)` (per-unit) for every `z` and multiplier.
    #[default]
    Random,
}

impl<T: Scalar> ScenarioX<T> {
    pub fn zeros(n: usize) -> Self {
        let z = || vec![T::zero(); n];
        Self {
            p: z(),
            q: z(),
            v: z(),
            l: z(),
            v_hat: z(),
            pc: z(),
            qw: z(),
            p_hat: z(),
            q_hat: z(),
            l_hat: z(),
            p0_plus: T::zero(),
            p0_minus: T::zero(),
        }
    }
}

impl<T: Scalar> ScenarioZ<T> {
    pub fn zeros(n: usize) -> Self {
        let z = || vec![T::zero(); n];
        Self {
            p: z(),
            q: z(),
            v: z(),
            l: z(),
            qw: z(),
            p0_plus: T::zero(),
            p0_minus: T::zero(),
        }
    }
}

impl<T: Scalar> ScenarioY<T> {
    pub fn zeros(n: usize) -> Self {
        let z = || vec![T::zero(); n];
        Self {
            lambda: z(),
            mu: z(),
            gamma: z(),
            omega: z(),
            omega_hat: z(),
            eta: z(),
            theta: z(),
            lambda_hat: z(),
            mu_hat: z(),
            gamma_hat: z(),
            zeta_plus: T::zero(),
            zeta_minus: T::zero(),
        }
    }
}

impl<T: Scalar> AdmmState<T> {
    pub fn zeros(nodes: usize, scenarios: usize, rho: T) -> Self {
        Self {
            x: (0..scenarios).map(|_| ScenarioX::zeros(nodes)).collect(),
            z: (0..scenarios).map(|_| ScenarioZ::zeros(nodes)).collect(),
            pc: vec![T::zero(); nodes],
            y: (0..scenarios).map(|_| ScenarioY::zeros(nodes)).collect(),
            rho,
            iteration: 0,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.pc.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.z.len()
    }
}

/// Allocates the blocks and fills `z` and the multipliers per `policy`.
/// Entries that do not exist for a node's role (root voltage, root current,
/// root consumption) stay zero. A pinned first stage overrides `p̃c`.
pub fn init_state<T: Scalar>(prog: &StochasticProgram<T>, rho: T, policy: InitPolicy, seed: u64) -> AdmmState<T> {
    let n = prog.num_nodes();
    let mut state = AdmmState::zeros(n, prog.num_scenarios(), rho);
    if policy == InitPolicy::Random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || T::of(rng.random_range(0.0..1.0));
        for k in 1..n {
            state.pc[k] = draw();
        }
        for (z, y) in state.z.iter_mut().zip(state.y.iter_mut()) {
            for k in 1..n {
                z.p[k] = draw();
                z.q[k] = draw();
                z.v[k] = draw();
                z.l[k] = draw();
                z.qw[k] = draw();
                y.lambda[k] = draw();
                y.mu[k] = draw();
                y.gamma[k] = draw();
                y.omega[k] = draw();
                y.omega_hat[k] = draw();
                y.eta[k] = draw();
                y.theta[k] = draw();
                y.lambda_hat[k] = draw();
                y.mu_hat[k] = draw();
                y.gamma_hat[k] = draw();
            }
            z.p0_plus = draw();
            z.p0_minus = draw();
            y.zeta_plus = draw();
            y.zeta_minus = draw();
        }
    }
    if let Some(fixed) = prog.pc_fixed() {
        state.pc.copy_from_slice(fixed);
    }
    state
}
