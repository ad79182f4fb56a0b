use super::ClosedFormError;
use crate::scalar::{clamp, Scalar};

/// `[t]_lo^hi`.
pub fn box_project<T: Scalar>(value: T, lo: T, hi: T) -> Result<T, ClosedFormError> {
    if !(lo <= hi) {
        return Err(ClosedFormError::BadBounds {
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        });
    }
    Ok(clamp(value, lo, hi))
}

/// `[t]⁺ = max(0, t)`.
pub fn positive_part<T: Scalar>(value: T) -> T {
    value.max(T::zero())
}

/// Consensus update of the first-stage consumption:
/// `argmin K_u(p − pc_max)² − Σ_m η^m p + ρ/2 Σ_m (pc^m − p)²` over `[pc_min, pc_max]`.
pub fn update_pc_tilde<T: Scalar>(k_u: T, pc_max: T, pc_min: T, eta: &[T], pc_m: &[T], rho: T) -> T {
    debug_assert_eq!(eta.len(), pc_m.len());
    let m = T::of(pc_m.len() as f64);
    let num = T::two() * k_u * pc_max + eta.iter().zip(pc_m).map(|(&e, &p)| e + rho * p).sum::<T>();
    let den = T::two() * k_u + rho * m;
    if den == T::zero() {
        return clamp(pc_max, pc_min, pc_max);
    }
    clamp(num / den, pc_min, pc_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clamp_examples() {
        assert_eq!(box_project(0.5, -1.0, 1.0).unwrap(), 0.5);
        assert_eq!(box_project(-3.0, -1.0, 1.0).unwrap(), -1.0);
        assert_eq!(positive_part(-2.0), 0.0);
        assert!(matches!(box_project(0.0, 1.0, -1.0), Err(ClosedFormError::BadBounds { .. })));
    }

    #[test]
    fn pc_at_peak_and_pure_average() {
        let p = update_pc_tilde(1.0, 0.05, 0.0, &[0.0; 3], &[0.05; 3], 2.0);
        assert!((p - 0.05f64).abs() < 1e-16);
        let avg = update_pc_tilde(0.0, 1.0, 0.0, &[0.0; 3], &[0.1, 0.2, 0.6], 5.0);
        assert!((avg - 0.3f64).abs() < 1e-15);
        let clipped = update_pc_tilde(0.0, 0.25, 0.0, &[0.0; 3], &[0.1, 0.2, 0.6], 5.0);
        assert_eq!(clipped, 0.25);
    }

    /// Golden-section search driven by `diff(x1, x2) = f(x1) − f(x2)`.
    fn golden(diff: impl Fn(f64, f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if diff(x1, x2) <= 0.0 {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        0.5 * (lo + hi)
    }

    proptest! {
        #[test]
        fn pc_matches_golden_section(
            k_u in 0.0f64..5.0,
            pc_max in 0.01f64..1.0,
            frac in 0.0f64..1.0,
            rho in 0.1f64..50.0,
            data in prop::collection::vec((-1.0f64..1.0, -0.5f64..1.5), 1..8),
        ) {
            let pc_min = frac * pc_max;
            let eta: Vec<f64> = data.iter().map(|d| d.0).collect();
            let pcs: Vec<f64> = data.iter().map(|d| d.1).collect();
            let got = update_pc_tilde(k_u, pc_max, pc_min, &eta, &pcs, rho);
            prop_assert!(got >= pc_min && got <= pc_max);
            // Objective differences with every term factored through
            // (p − c), so comparisons stay accurate close to the minimizer.
            let delta = |p: f64, c: f64| {
                k_u * (p - c) * (p + c - 2.0 * pc_max)
                    + eta
                        .iter()
                        .zip(&pcs)
                        .map(|(e, q)| -e * (p - c) + 0.5 * rho * (c - p) * (2.0 * q - p - c))
                        .sum::<f64>()
            };
            let want = golden(delta, pc_min, pc_max);
            prop_assert!((got - want).abs() <= 1e-9);
        }
    }
}
