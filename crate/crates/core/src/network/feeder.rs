//! Parametric feeders: a main trunk with chain laterals, uniform line spacing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LineParams, Network, NetworkError, NodeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LateralSpec {
    /// Trunk (or earlier lateral) node the lateral hangs from.
    pub at: u32,
    pub len: u32,
}

/// Which user nodes carry PV and with what nameplate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvLayout {
    pub s_w_mva: f64,
    /// Share of user nodes (chosen at random when below 1) with PV.
    pub fraction: f64,
    /// Explicit `(node, s_w)` assignments applied after the random draw.
    pub overrides: Vec<(u32, f64)>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederSpec {
    pub trunk_len: u32,
    pub laterals: Vec<LateralSpec>,
    pub spacing_km: f64,
    pub r_ohm_per_km: f64,
    pub x_ohm_per_km: f64,
    pub v0_kv: f64,
    pub s_base_mva: f64,
    pub epsilon: f64,
    pub l_max_ka2: f64,
    pub p_load_mw: f64,
    pub pf: f64,
    pub pc_max_mw: f64,
    pub k_u: f64,
    pub pv: PvLayout,
}

impl Default for FeederSpec {
    fn default() -> Self {
        Self {
            trunk_len: 30,
            laterals: vec![LateralSpec { at: 20, len: 10 }, LateralSpec { at: 20, len: 10 }],
            spacing_km: 0.2,
            r_ohm_per_km: 0.33,
            x_ohm_per_km: 0.38,
            v0_kv: 7.2,
            s_base_mva: 1.0,
            epsilon: 0.05,
            l_max_ka2: 0.5,
            p_load_mw: 0.1,
            pf: 0.94,
            pc_max_mw: 0.05,
            k_u: 1.0,
            pv: PvLayout {
                s_w_mva: 0.1,
                fraction: 1.0,
                overrides: vec![(30, 1.0)],
                seed: 0,
            },
        }
    }
}

impl FeederSpec {
    pub fn num_users(&self) -> u32 {
        self.trunk_len + self.laterals.iter().map(|l| l.len).sum::<u32>()
    }

    /// Node ids are assigned trunk first (`1..=trunk_len`), then each lateral
    /// in order as a consecutive chain.
    pub fn build(&self) -> Result<Network, NetworkError> {
        let n = self.num_users();
        if !(0.0..=1.0).contains(&self.pv.fraction) {
            return Err(NetworkError::BadParameter {
                node: None,
                field: "fraction",
                reason: "PV share must lie in [0, 1]".into(),
            });
        }
        let mut ancestors = Vec::with_capacity(n as usize);
        for k in 1..=self.trunk_len {
            ancestors.push(k - 1);
        }
        let mut next = self.trunk_len + 1;
        for lat in &self.laterals {
            if lat.at >= next {
                return Err(NetworkError::UnknownNode { node: lat.at });
            }
            for step in 0..lat.len {
                ancestors.push(if step == 0 { lat.at } else { next - 1 });
                next += 1;
            }
        }

        let mut s_w = vec![0.0; n as usize + 1];
        let chosen = (self.pv.fraction * n as f64).round() as usize;
        if chosen == n as usize {
            s_w.iter_mut().skip(1).for_each(|s| *s = self.pv.s_w_mva);
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.pv.seed);
            for k in rand::seq::index::sample(&mut rng, n as usize, chosen) {
                s_w[k + 1] = self.pv.s_w_mva;
            }
        }
        for &(node, value) in &self.pv.overrides {
            if node == 0 || node > n {
                return Err(NetworkError::UnknownNode { node });
            }
            s_w[node as usize] = value;
        }

        let slope = (1.0 / (self.pf * self.pf) - 1.0).max(0.0).sqrt();
        let mut nodes = vec![NodeParams::substation()];
        let mut lines = Vec::with_capacity(n as usize);
        for (k, &anc) in ancestors.iter().enumerate() {
            let id = k as u32 + 1;
            nodes.push(NodeParams {
                id,
                ancestor: Some(anc),
                p_l_mw: self.p_load_mw,
                q_l_mvar: self.p_load_mw * slope,
                pf: self.pf,
                pc_min_mw: 0.0,
                pc_max_mw: self.pc_max_mw,
                s_w_mva: s_w[id as usize],
                q_s: 0.0,
                k_u: self.k_u,
            });
            lines.push(LineParams {
                node: id,
                r_ohm: self.r_ohm_per_km * self.spacing_km,
                x_ohm: self.x_ohm_per_km * self.spacing_km,
                l_max_ka2: self.l_max_ka2,
            });
        }
        Network::build(nodes, lines, self.v0_kv, self.s_base_mva, self.epsilon)
    }
}

/// 50-user feeder: 30-node trunk, two 10-node laterals at node 20, PV
/// everywhere (0.1 MVA) with a 1 MVA unit at the trunk end.
pub fn day_type_feeder() -> FeederSpec {
    FeederSpec::default()
}

/// 100-user feeder: 60-node trunk, two 20-node laterals at node 40, half of
/// the users with 0.4 MVA PV and a 1 MVA unit at node 60.
pub fn local_control_feeder(seed: u64) -> FeederSpec {
    FeederSpec {
        trunk_len: 60,
        laterals: vec![LateralSpec { at: 40, len: 20 }, LateralSpec { at: 40, len: 20 }],
        pv: PvLayout {
            s_w_mva: 0.4,
            fraction: 0.5,
            overrides: vec![(60, 1.0)],
            seed,
        },
        ..FeederSpec::default()
    }
}

/// The 50-user topology with half of the users at 0.15 MVA PV and a 1.5 MVA
/// unit at the end of the second lateral (node 50).
pub fn rho_study_feeder(seed: u64) -> FeederSpec {
    FeederSpec {
        pv: PvLayout {
            s_w_mva: 0.15,
            fraction: 0.5,
            overrides: vec![(50, 1.5)],
            seed,
        },
        ..FeederSpec::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    fn bfs_path(net: &Network, target: u32) -> Vec<u32> {
        let file = net.to_file();
        let mut prev = std::collections::HashMap::new();
        let mut queue = VecDeque::from([0u32]);
        while let Some(u) = queue.pop_front() {
            for n in file.nodes.iter().filter(|n| n.ancestor == Some(u)) {
                prev.insert(n.id, u);
                queue.push_back(n.id);
            }
        }
        let mut path = vec![target];
        let mut cur = target;
        while let Some(&p) = prev.get(&cur) {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    #[test]
    fn day_type_topology() {
        let net = day_type_feeder().build().unwrap();
        assert_eq!(net.len(), 51);
        assert_eq!(net.num_lines(), 50);
        let twenty = net.index_of(20).unwrap();
        let kids: Vec<u32> = net.children(twenty).iter().map(|&c| net.id_of(c)).collect();
        assert_eq!(kids, vec![21, 31, 41]);
        assert_eq!(net.depth(net.index_of(30).unwrap()), 30);
        assert_eq!(net.depth(net.index_of(40).unwrap()), 30);
        assert_eq!(net.depth(net.index_of(50).unwrap()), 30);
        let leaves: Vec<u32> = net.leaves().map(|k| net.id_of(k)).collect();
        assert_eq!(leaves, vec![30, 40, 50]);
        let line = net.line(5).unwrap();
        assert!((line.r_ohm - 0.066).abs() < 1e-15 && (line.x_ohm - 0.076).abs() < 1e-15);
        assert_eq!(net.node(net.index_of(30).unwrap()).s_w_mva, 1.0);
        assert_eq!(net.node(net.index_of(29).unwrap()).s_w_mva, 0.1);
    }

    #[test]
    fn lateral_path_matches_bfs() {
        let net = day_type_feeder().build().unwrap();
        let path = net.path_to_root(35, true).unwrap();
        let mut expected: Vec<u32> = (0..=20).collect();
        expected.extend(31..=35);
        assert_eq!(path, expected);
        assert_eq!(path, bfs_path(&net, 35));
        for id in net.user_ids() {
            assert_eq!(net.path_to_root(id, true).unwrap(), bfs_path(&net, id));
        }
    }

    #[test]
    fn child_counts_sum_to_lines() {
        for spec in [day_type_feeder(), local_control_feeder(3), rho_study_feeder(9)] {
            let net = spec.build().unwrap();
            let total: usize = (0..net.len()).map(|k| net.children(k).len()).sum();
            assert_eq!(total, net.num_lines());
            for id in net.user_ids() {
                let p = net.path_to_root(id, true).unwrap();
                assert_eq!(p[0], 0);
                assert!(p.len() - 1 <= net.num_lines());
            }
        }
    }

    #[test]
    fn half_penetration_layout() {
        let net = local_control_feeder(11).build().unwrap();
        assert_eq!(net.len(), 101);
        let with_pv = net.nodes().iter().filter(|n| n.s_w_mva > 0.0).count();
        assert!((50..=51).contains(&with_pv));
        assert_eq!(net.node(net.index_of(60).unwrap()).s_w_mva, 1.0);
        let again = local_control_feeder(11).build().unwrap();
        assert_eq!(again.to_file(), net.to_file());
    }
}
