//! Fast-forward selection under the Kantorovich distance.
//!
//! Greedy selection is not exact for `M > 1`. The only bound it carries is
//! the sandwich `opt(M) ≤ greedy(M) ≤ greedy(1) = opt(1)`: the first round
//! scans every singleton, and each later round can only lower the distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Scenario, ScenarioError, ScenarioSet};
use crate::scalar::compensated_sum;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    Euclidean,
    L1,
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// `Σ_{ω ∉ kept} π_ω · min_{ω' ∈ kept} d(ω, ω')`.
pub fn kantorovich_distance(full: &ScenarioSet, kept: &[usize], metric: Metric) -> Result<f64, ScenarioError> {
    if kept.is_empty() {
        return Err(ScenarioError::EmptyKeptSet);
    }
    if let Some(&index) = kept.iter().find(|&&k| k >= full.len()) {
        return Err(ScenarioError::BadIndex { index });
    }
    let s = full.scenarios();
    Ok(compensated_sum((0..s.len()).filter(|i| !kept.contains(i)).map(|i| {
        let nearest = kept
            .iter()
            .map(|&k| metric.distance(&s[i].w_mw, &s[k].w_mw))
            .fold(f64::INFINITY, f64::min);
        s[i].pi * nearest
    })))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSet {
    /// Kept scenarios in original index order, carrying aggregated weights.
    pub set: ScenarioSet,
    /// Original indices of the kept scenarios, in the order they were picked.
    pub picked: Vec<usize>,
    /// Kantorovich distance between the full and the reduced set.
    pub distance: f64,
    /// Smallest aggregated probability (reported, never used as a stop rule).
    pub min_probability: f64,
}

/// Greedy forward selection of `m` scenarios; ties go to the lowest index.
/// Dropped probability mass moves to the nearest kept scenario.
pub fn fast_forward_reduce(full: &ScenarioSet, m: usize, metric: Metric) -> Result<ReducedSet, ScenarioError> {
    let n = full.len();
    if m == 0 || m > n {
        return Err(ScenarioError::BadCardinality { m, total: n });
    }
    let s = full.scenarios();
    let dist: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| metric.distance(&s[i].w_mw, &s[j].w_mw)).collect())
        .collect();

    let mut kept = vec![false; n];
    let mut mindist = vec![f64::INFINITY; n];
    let mut picked = Vec::with_capacity(m);
    for _ in 0..m {
        let costs: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|u| {
                if kept[u] {
                    return f64::INFINITY;
                }
                (0..n)
                    .filter(|&i| i != u && !kept[i])
                    .map(|i| s[i].pi * mindist[i].min(dist[i][u]))
                    .sum()
            })
            .collect();
        let mut best = usize::MAX;
        for (u, &c) in costs.iter().enumerate() {
            if !kept[u] && (best == usize::MAX || c < costs[best]) {
                best = u;
            }
        }
        kept[best] = true;
        picked.push(best);
        for i in 0..n {
            mindist[i] = mindist[i].min(dist[i][best]);
        }
    }

    let mut order = picked.clone();
    order.sort_unstable();
    let mut mass: Vec<Vec<f64>> = order.iter().map(|&k| vec![s[k].pi]).collect();
    for i in (0..n).filter(|&i| !kept[i]) {
        let mut owner = 0;
        for (slot, &k) in order.iter().enumerate() {
            if dist[i][k] < dist[i][order[owner]] {
                owner = slot;
            }
        }
        mass[owner].push(s[i].pi);
    }
    let scenarios: Vec<Scenario> = order
        .iter()
        .zip(&mass)
        .map(|(&k, parts)| Scenario {
            pi: compensated_sum(parts.iter().copied()),
            w_mw: s[k].w_mw.clone(),
        })
        .collect();
    let min_probability = scenarios.iter().map(|x| x.pi).fold(f64::INFINITY, f64::min);
    let distance = kantorovich_distance(full, &order, metric)?;
    Ok(ReducedSet {
        set: ScenarioSet::new(full.node_ids().to_vec(), scenarios, full.seed())?,
        picked,
        distance,
        min_probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_set(values: &[f64]) -> ScenarioSet {
        ScenarioSet::equiprobable(vec![1], values.iter().map(|&v| vec![v]).collect(), 0).unwrap()
    }

    fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        (0..n)
            .flat_map(|last| {
                combinations(last, k - 1).into_iter().map(move |mut c| {
                    c.push(last);
                    c
                })
            })
            .collect()
    }

    #[test]
    fn hand_enumerated_distances() {
        let set = scalar_set(&[0.0, 1.0, 10.0]);
        let all = kantorovich_distance(&set, &[0, 1, 2], Metric::Euclidean).unwrap();
        assert_eq!(all, 0.0);
        let d1 = kantorovich_distance(&set, &[1], Metric::Euclidean).unwrap();
        assert!((d1 - 10.0 / 3.0).abs() < 1e-15);
        let d10 = kantorovich_distance(&set, &[2], Metric::Euclidean).unwrap();
        assert!((d10 - 19.0 / 3.0).abs() < 1e-15);
        assert_eq!(kantorovich_distance(&set, &[], Metric::Euclidean), Err(ScenarioError::EmptyKeptSet));
    }

    #[test]
    fn single_representative_is_the_brute_force_best() {
        let set = scalar_set(&[0.0, 1.0, 10.0]);
        let red = fast_forward_reduce(&set, 1, Metric::Euclidean).unwrap();
        assert_eq!(red.picked, vec![1]);
        assert_eq!(red.set.scenarios()[0].w_mw, vec![1.0]);
        assert!((red.set.scenarios()[0].pi - 1.0).abs() < 1e-15);
        let brute = (0..3)
            .map(|k| kantorovich_distance(&set, &[k], Metric::Euclidean).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert_eq!(red.distance, brute);
    }

    #[test]
    fn full_cardinality_is_identity() {
        let set = scalar_set(&[3.0, 1.0, 2.0, 7.0]);
        let red = fast_forward_reduce(&set, 4, Metric::Euclidean).unwrap();
        assert_eq!(red.set, set);
        assert_eq!(red.distance, 0.0);
        assert!(fast_forward_reduce(&set, 5, Metric::Euclidean).is_err());
        assert!(fast_forward_reduce(&set, 0, Metric::Euclidean).is_err());
    }

    #[test]
    fn eight_point_sets_respect_the_greedy_sandwich() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let vals: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..10.0)).collect();
            let set = scalar_set(&vals);
            let opt = |k| {
                combinations(8, k)
                    .iter()
                    .map(|c| kantorovich_distance(&set, c, Metric::Euclidean).unwrap())
                    .fold(f64::INFINITY, f64::min)
            };
            let g3 = fast_forward_reduce(&set, 3, Metric::Euclidean).unwrap();
            let g1 = fast_forward_reduce(&set, 1, Metric::Euclidean).unwrap();
            assert!((g1.distance - opt(1)).abs() < 1e-12);
            assert!(opt(3) <= g3.distance + 1e-12 && g3.distance <= g1.distance + 1e-12);
            let total = compensated_sum(g3.set.scenarios().iter().map(|s| s.pi));
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ties_pick_the_lowest_index() {
        let set = scalar_set(&[0.0, 2.0]);
        assert_eq!(fast_forward_reduce(&set, 1, Metric::Euclidean).unwrap().picked, vec![0]);
    }

    proptest! {
        #[test]
        fn reduction_invariants(
            vals in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 2..30),
            l1 in any::<bool>(),
        ) {
            let n = vals.len();
            let set = ScenarioSet::equiprobable(vec![1, 2, 3], vals, 0).unwrap();
            let metric = if l1 { Metric::L1 } else { Metric::Euclidean };
            let mut prev = f64::INFINITY;
            for m in 1..=n.min(6) {
                let red = fast_forward_reduce(&set, m, metric).unwrap();
                let total = compensated_sum(red.set.scenarios().iter().map(|s| s.pi));
                prop_assert!((total - 1.0).abs() <= 1e-12);
                prop_assert!(red.distance <= prev + 1e-12);
                prev = red.distance;
                for &k in &red.picked {
                    let found = red.set.scenarios().iter().any(|s| s.w_mw == set.scenarios()[k].w_mw);
                    prop_assert!(found);
                }
            }
        }
    }
}
