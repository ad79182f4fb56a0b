use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{ScenarioError, ScenarioSet};
use crate::network::Network;

/// Beta law on `[0, 1]` for the normalized output `w / w_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
    /// True when the empirical standard-deviation relation gave a variance the
    /// beta family cannot attain and `0.99·m(1 − m)` was used instead.
    pub clamped: bool,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }
}

/// Moment-matched parameters with `σ/w_max = 0.2·m + 0.21`.
pub fn beta_params_from_mean(mean_ratio: f64) -> Result<BetaParams, ScenarioError> {
    if !(mean_ratio > 0.0 && mean_ratio < 1.0) {
        return Err(ScenarioError::OutOfRange { what: "mean_ratio", value: mean_ratio });
    }
    let m = mean_ratio;
    let sd = 0.2 * m + 0.21;
    let ceiling = m * (1.0 - m);
    let (var, clamped) = if sd * sd >= ceiling { (0.99 * ceiling, true) } else { (sd * sd, false) };
    let total = ceiling / var - 1.0;
    Ok(BetaParams {
        alpha: m * total,
        beta: (1.0 - m) * total,
        clamped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanRatio {
    Global(f64),
    PerNode(BTreeMap<u32, f64>),
}

/// How draws at different nodes relate within one scenario.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correlation {
    /// Independent draw per node.
    #[default]
    Independent,
    /// One draw per scenario shared by every node, scaled by each `w_max`.
    CommonFactor,
}

/// `count` equiprobable scenarios over all user nodes. Nodes without PV get
/// zero injection.
pub fn sample_scenarios(
    network: &Network,
    mean: &MeanRatio,
    count: usize,
    seed: u64,
    correlation: Correlation,
) -> Result<ScenarioSet, ScenarioError> {
    if count == 0 {
        return Err(ScenarioError::BadCardinality { m: 0, total: 0 });
    }
    let ids = network.user_ids();
    let mut laws = Vec::with_capacity(ids.len());
    for &id in &ids {
        let node = network.node(network.index_of(id).expect("user id of the network"));
        let ratio = match mean {
            MeanRatio::Global(r) => *r,
            MeanRatio::PerNode(map) => *map.get(&id).unwrap_or(&0.5),
        };
        let w_max = node.w_max_mw();
        if w_max > 0.0 {
            let p = beta_params_from_mean(ratio)?;
            let law = Beta::new(p.alpha, p.beta).map_err(|_| ScenarioError::OutOfRange { what: "beta", value: p.alpha })?;
            laws.push(Some((law, w_max)));
        } else {
            laws.push(None);
        }
    }
    let common = match (correlation, mean) {
        (Correlation::Independent, _) => None,
        (Correlation::CommonFactor, MeanRatio::Global(r)) => {
            let p = beta_params_from_mean(*r)?;
            Some(Beta::new(p.alpha, p.beta).map_err(|_| ScenarioError::OutOfRange { what: "beta", value: p.alpha })?)
        }
        (Correlation::CommonFactor, MeanRatio::PerNode(_)) => {
            return Err(ScenarioError::OutOfRange { what: "common-factor mode needs a global mean", value: f64::NAN })
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let shared = common.as_ref().map(|law| law.sample(&mut rng));
        let row = laws
            .iter()
            .map(|law| match law {
                None => 0.0,
                Some((beta, w_max)) => {
                    let u: f64 = shared.unwrap_or_else(|| beta.sample(&mut rng));
                    u.clamp(0.0, 1.0) * w_max
                }
            })
            .collect();
        rows.push(row);
    }
    ScenarioSet::equiprobable(ids, rows, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::day_type_feeder;
    use rand::Rng;

    #[test]
    fn cloudy_parameters() {
        let p = beta_params_from_mean(0.3).unwrap();
        assert!(!p.clamped);
        let total = 0.21 / 0.0729 - 1.0;
        assert!((p.alpha + p.beta - total).abs() < 1e-12);
        assert!((p.alpha - 0.5642).abs() < 5e-5 && (p.beta - 1.3165).abs() < 5e-5);
        assert!((p.mean() - 0.3).abs() < 1e-10);
        assert!((p.variance() - 0.27f64.powi(2)).abs() < 1e-10);
    }

    #[test]
    fn half_mean_is_symmetric() {
        let p = beta_params_from_mean(0.5).unwrap();
        assert!((p.alpha - p.beta).abs() < 1e-14);
    }

    #[test]
    fn sunny_mean_clamps_variance() {
        let raw = (0.2f64 * 0.9 + 0.21).powi(2);
        assert!(raw > 0.9 * 0.1);
        let p = beta_params_from_mean(0.9).unwrap();
        assert!(p.clamped && p.alpha > 0.0 && p.beta > 0.0);
        assert!((p.mean() - 0.9).abs() < 1e-10);
        assert!((p.variance() - 0.99 * 0.09).abs() < 1e-10);
        assert!(p.variance() < 0.09);
    }

    #[test]
    fn mean_outside_unit_interval_is_rejected() {
        assert!(beta_params_from_mean(0.0).is_err());
        assert!(beta_params_from_mean(1.0).is_err());
    }

    #[test]
    fn monte_carlo_moments() {
        let p = beta_params_from_mean(0.3).unwrap();
        let law = Beta::new(p.alpha, p.beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x: f64 = law.sample(&mut rng);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean / 0.3 - 1.0).abs() < 0.01);
        assert!((var / p.variance() - 1.0).abs() < 0.01);
    }

    #[test]
    fn sampled_set_properties() {
        let mut spec = day_type_feeder();
        spec.pv.overrides.clear();
        spec.pv.fraction = 0.5;
        spec.pv.seed = 3;
        let net = spec.build().unwrap();
        let set = sample_scenarios(&net, &MeanRatio::Global(0.3), 1000, 17, Correlation::Independent).unwrap();
        assert_eq!(set.len(), 1000);
        let again = sample_scenarios(&net, &MeanRatio::Global(0.3), 1000, 17, Correlation::Independent).unwrap();
        assert_eq!(set, again);
        let sd = 0.27 / 1000f64.sqrt();
        for (k, &id) in set.node_ids().iter().enumerate() {
            let node = net.node(net.index_of(id).unwrap());
            let w_max = node.w_max_mw();
            if w_max == 0.0 {
                assert!(set.scenarios().iter().all(|s| s.w_mw[k] == 0.0));
                continue;
            }
            let mean = set.scenarios().iter().map(|s| s.w_mw[k] / w_max).sum::<f64>() / 1000.0;
            assert!((mean - 0.3).abs() < 3.0 * sd, "node {id}: {mean}");
            assert!(set.scenarios().iter().all(|s| s.w_mw[k] <= w_max));
        }
        assert!(set.scenarios().iter().all(|s| s.pi == 1.0 / 1000.0));
    }

    #[test]
    fn common_factor_shares_the_draw() {
        let net = day_type_feeder().build().unwrap();
        let set = sample_scenarios(&net, &MeanRatio::Global(0.6), 20, 5, Correlation::CommonFactor).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = rng.random_range(0..20);
        let s = &set.scenarios()[m];
        let r0 = s.w_mw[0] / (0.1 / 1.1);
        let r29 = s.w_mw[29] / (1.0 / 1.1);
        assert!((r0 - r29).abs() < 1e-12);
    }
}
