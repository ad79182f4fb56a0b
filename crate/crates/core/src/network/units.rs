use serde::{Deserialize, Serialize};

/// Per-unit system for a feeder: base power and base (line-to-neutral) voltage.
///
/// Physical units follow the branch-flow convention: Ω, MW, MVar, kV, kA, so
/// that `P = V·I` holds in MW = kV·kA and the squared quantities are `(kV)²`
/// and `(kA)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    pub s_base_mva: f64,
    pub v_base_kv: f64,
}

impl PerUnitBase {
    pub fn new(s_base_mva: f64, v_base_kv: f64) -> Self {
        Self { s_base_mva, v_base_kv }
    }

    pub fn impedance_base_ohm(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.s_base_mva
    }

    pub fn current_base_ka(&self) -> f64 {
        self.s_base_mva / self.v_base_kv
    }

    pub fn power_to_pu(&self, mw: f64) -> f64 {
        mw / self.s_base_mva
    }

    pub fn power_from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base_mva
    }

    pub fn impedance_to_pu(&self, ohm: f64) -> f64 {
        ohm / self.impedance_base_ohm()
    }

    pub fn impedance_from_pu(&self, pu: f64) -> f64 {
        pu * self.impedance_base_ohm()
    }

    pub fn voltage_sq_to_pu(&self, kv2: f64) -> f64 {
        kv2 / (self.v_base_kv * self.v_base_kv)
    }

    pub fn voltage_sq_from_pu(&self, pu: f64) -> f64 {
        pu * self.v_base_kv * self.v_base_kv
    }

    pub fn current_sq_to_pu(&self, ka2: f64) -> f64 {
        let ib = self.current_base_ka();
        ka2 / (ib * ib)
    }

    pub fn current_sq_from_pu(&self, pu: f64) -> f64 {
        let ib = self.current_base_ka();
        pu * ib * ib
    }

    /// Shunt coefficient in MVar per (kV)²: `q_s · v` is a reactive power.
    pub fn shunt_to_pu(&self, mvar_per_kv2: f64) -> f64 {
        mvar_per_kv2 * self.v_base_kv * self.v_base_kv / self.s_base_mva
    }

    pub fn shunt_from_pu(&self, pu: f64) -> f64 {
        pu * self.s_base_mva / (self.v_base_kv * self.v_base_kv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn reference_feeder_bases() {
        let base = PerUnitBase::new(1.0, 7.2);
        assert!((base.impedance_base_ohm() - 51.84).abs() < 1e-12);
        assert!((base.current_sq_to_pu(0.5) - 25.92).abs() < 1e-12);
        assert!((base.voltage_sq_to_pu(7.2 * 7.2) - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn round_trips(q in 1e-6f64..1e6, s in 0.1f64..100.0, v in 0.4f64..230.0) {
            let b = PerUnitBase::new(s, v);
            prop_assert!(rel(b.power_from_pu(b.power_to_pu(q)), q) < 1e-12);
            prop_assert!(rel(b.impedance_from_pu(b.impedance_to_pu(q)), q) < 1e-12);
            prop_assert!(rel(b.voltage_sq_from_pu(b.voltage_sq_to_pu(q)), q) < 1e-12);
            prop_assert!(rel(b.current_sq_from_pu(b.current_sq_to_pu(q)), q) < 1e-12);
            prop_assert!(rel(b.shunt_from_pu(b.shunt_to_pu(q)), q) < 1e-12);
        }
    }
}
