use serde::{Deserialize, Serialize};

use super::BaselineError;
use crate::network::LineParams;

/// Blending weight of the local rule; values above 1 are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub k: f64,
}

impl PolicyParams {
    pub fn new(k: f64) -> Result<Self, BaselineError> {
        if k.is_finite() {
            Ok(Self { k })
        } else {
            Err(BaselineError::BadPolicy { k })
        }
    }
}

/// What the inverter at one node can observe. `p_c`, `q_c` include the base
/// load (`P_L + p_c`, `Q_L + q_c`). Any consistent power unit works.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMeasurements {
    pub w: f64,
    pub p_c: f64,
    pub q_c: f64,
    pub qw_max: f64,
}

fn clip(v: f64, cap: f64) -> f64 {
    v.clamp(-cap, cap)
}

/// `[K·F_L + (1 − K)·F_V]` clipped to the inverter capability, where `F_L`
/// cancels the local reactive demand and `F_V` also offsets the voltage swing
/// caused by net real injection over the line's `x/r` ratio.
pub fn local_policy_qw(node: u32, line: &LineParams, meas: &LocalMeasurements, params: PolicyParams) -> Result<f64, BaselineError> {
    if line.r_ohm == 0.0 {
        return Err(BaselineError::ZeroResistance { node });
    }
    let cap = meas.qw_max.max(0.0);
    let f_l = clip(meas.q_c, cap);
    let f_v = clip(meas.q_c + line.x_ohm * (meas.p_c - meas.w) / line.r_ohm, cap);
    Ok(clip(params.k * f_l + (1.0 - params.k) * f_v, cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(r: f64, x: f64) -> LineParams {
        LineParams {
            node: 1,
            r_ohm: r,
            x_ohm: x,
            l_max_ka2: 1.0,
        }
    }

    #[test]
    fn balanced_injection_returns_demand() {
        let meas = LocalMeasurements { w: 0.2, p_c: 0.2, q_c: 0.05, qw_max: 0.1 };
        for k in [-2.0, 0.0, 0.7, 1.54, 3.0] {
            let q = local_policy_qw(1, &line(0.3, 0.5), &meas, PolicyParams::new(k).unwrap()).unwrap();
            assert!((q - 0.05).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_blend() {
        let meas = LocalMeasurements { w: 0.5, p_c: 0.2, q_c: 0.05, qw_max: 0.2 };
        let q = local_policy_qw(1, &line(0.1, 0.1), &meas, PolicyParams::new(1.5).unwrap()).unwrap();
        // F_L = 0.05, F_V = clip(0.05 − 0.3) = −0.2, 1.5·0.05 − 0.5·(−0.2) = 0.175
        assert!((q - 0.175).abs() < 1e-15);
    }

    #[test]
    fn no_capability_means_no_reactive_power() {
        let meas = LocalMeasurements { w: 0.4, p_c: 0.1, q_c: 0.05, qw_max: 0.0 };
        assert_eq!(local_policy_qw(1, &line(0.1, 0.2), &meas, PolicyParams::new(1.2).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn zero_resistance_is_rejected() {
        let meas = LocalMeasurements { w: 0.4, p_c: 0.1, q_c: 0.05, qw_max: 0.1 };
        let err = local_policy_qw(7, &line(0.0, 0.2), &meas, PolicyParams::new(1.2).unwrap()).unwrap_err();
        assert!(matches!(err, BaselineError::ZeroResistance { node: 7 }));
        assert!(PolicyParams::new(f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn output_stays_within_capability(
            w in 0.0f64..1.0, p_c in 0.0f64..1.0, q_c in -1.0f64..1.0, cap in 0.0f64..0.5,
            k in -5.0f64..5.0, r in 0.01f64..2.0, x in 0.0f64..2.0,
        ) {
            let meas = LocalMeasurements { w, p_c, q_c, qw_max: cap };
            let q = local_policy_qw(1, &line(r, x), &meas, PolicyParams::new(k).unwrap()).unwrap();
            prop_assert!(q.abs() <= cap);

            // same rule written out with min/max
            let c = |v: f64| v.max(-cap).min(cap);
            let expect = c(k * c(q_c) + (1.0 - k) * c(q_c + x / r * (p_c - w)));
            prop_assert!((q - expect).abs() <= 1e-12);
        }
    }
}
