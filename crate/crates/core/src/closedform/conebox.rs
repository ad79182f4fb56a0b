use serde::{Deserialize, Serialize};

use super::roots::bracketed_root;
use super::ClosedFormError;
use crate::scalar::{clamp, Scalar};

/// `min Σ (z_i² + c_i z_i)` subject to `z3_min ≤ z3 ≤ z3_max`,
/// `(z1² + z2²)/z3 ≤ k2·z4` and `z4 ≤ z4_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ConeBoxInstance<T: Scalar> {
    pub c: [T; 4],
    pub k2: T,
    pub z3_min: T,
    pub z3_max: T,
    pub z4_max: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Z3Position {
    Lower,
    Interior,
    Upper,
}

/// Active-set pattern of the minimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConeBranch {
    pub cap_active: bool,
    pub cone_active: bool,
    pub z3: Z3Position,
}

impl ConeBranch {
    pub const COUNT: usize = 12;

    pub fn index(&self) -> usize {
        let pos = match self.z3 {
            Z3Position::Lower => 0,
            Z3Position::Interior => 1,
            Z3Position::Upper => 2,
        };
        usize::from(self.cap_active) * 6 + usize::from(self.cone_active) * 3 + pos
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeBoxSolution<T> {
    pub z: [T; 4],
    pub branch: ConeBranch,
    /// Multiplier of the cone constraint (in the `t²/z3 ≤ k2·z4` form).
    pub mu: T,
    /// Multiplier of the cap `z4 ≤ z4_max`.
    pub gamma: T,
}

/// The problem after rotating `(z1, z2)` onto the direction of `−(c1, c2)`:
/// minimize `(t − r)² + (z3 − a3)² + (z4 − a4)²` with `t² ≤ k2·z3·z4`.
struct Reduced<T> {
    r: T,
    a3: T,
    a4: T,
    k2: T,
    lo: T,
    hi: T,
    cap: T,
    tol: T,
}

struct Candidate<T> {
    t: T,
    z3: T,
    z4: T,
    mu: T,
    gamma: T,
    branch: ConeBranch,
}

impl<T: Scalar> Reduced<T> {
    fn position(clamped_low: bool, clamped_high: bool) -> Z3Position {
        if clamped_low {
            Z3Position::Lower
        } else if clamped_high {
            Z3Position::Upper
        } else {
            Z3Position::Interior
        }
    }

    /// `∂L/∂z3` restricted to the cone-tight curve `t = r z3/(z3 + μ)`.
    fn h(&self, z3: T, mu: T) -> T {
        let s = z3 + mu;
        T::two() * (z3 - self.a3) - mu * self.r * self.r / (s * s)
    }

    /// Minimizing `z3` for a fixed cone multiplier, with its derivative in `μ`.
    fn z3_of_mu(&self, mu: T) -> (T, Z3Position, T) {
        if mu == T::zero() || self.r == T::zero() {
            let z = clamp(self.a3, self.lo, self.hi);
            return (z, Self::position(self.a3 < self.lo, self.a3 > self.hi), T::zero());
        }
        if self.h(self.lo, mu) >= T::zero() {
            return (self.lo, Z3Position::Lower, T::zero());
        }
        if self.h(self.hi, mu) <= T::zero() {
            return (self.hi, Z3Position::Upper, T::zero());
        }
        let r2 = self.r * self.r;
        let z = bracketed_root(
            |z| {
                let s = z + mu;
                (self.h(z, mu), T::two() + T::two() * mu * r2 / (s * s * s))
            },
            self.lo,
            self.hi,
        );
        let s = z + mu;
        let h_z = T::two() + T::two() * mu * r2 / (s * s * s);
        let h_mu = r2 * (mu - z) / (s * s * s);
        (z, Z3Position::Interior, -h_mu / h_z)
    }

    /// Cone residual along the `γ = 0` path: `r² z3/(z3 + μ)² − k2·z4(μ)`.
    fn g(&self, mu: T) -> (T, T) {
        let (z3, _, dz3) = self.z3_of_mu(mu);
        let s = z3 + mu;
        let r2 = self.r * self.r;
        let z4 = self.a4 + self.k2 * mu * T::half();
        let val = r2 * z3 / (s * s) - self.k2 * z4;
        let der = r2 * (dz3 * s - T::two() * z3 * (dz3 + T::one())) / (s * s * s)
            - self.k2 * self.k2 * T::half();
        (val, der)
    }

    fn objective(&self, c: &Candidate<T>) -> T {
        let d = [c.t - self.r, c.z3 - self.a3, c.z4 - self.a4];
        d.iter().map(|&v| v * v).sum()
    }

    fn candidates(&self) -> Vec<Candidate<T>> {
        let mut out = Vec::with_capacity(4);
        let tol = self.tol;
        let k2 = self.k2;
        let r2 = self.r * self.r;
        let free_z3 = clamp(self.a3, self.lo, self.hi);
        let free_pos = Self::position(self.a3 < self.lo, self.a3 > self.hi);

        // Cap inactive, cone inactive.
        if self.a4 <= self.cap && r2 <= k2 * free_z3 * self.a4 + tol {
            out.push(Candidate {
                t: self.r,
                z3: free_z3,
                z4: self.a4,
                mu: T::zero(),
                gamma: T::zero(),
                branch: ConeBranch { cap_active: false, cone_active: false, z3: free_pos },
            });
        }

        // Cap inactive, cone active: solve g(μ) = 0 for μ > 0.
        let (g0, _) = self.g(T::zero());
        if g0 > T::zero() {
            // z3/(z3 + μ)² ≤ 1/(4μ) bounds g from above by a quadratic in μ
            // whose positive root brackets the solution.
            let mut hi = (self.a4.hypot(self.r * T::half().sqrt()) - self.a4) / k2;
            hi = hi.max(T::min_positive_value());
            let mut iters = 0;
            while self.g(hi).0 > T::zero() && iters < 2000 {
                hi = hi * T::two();
                iters += 1;
            }
            let mu = bracketed_root(|m| self.g(m), T::zero(), hi);
            let (z3, pos, _) = self.z3_of_mu(mu);
            let z4 = self.a4 + k2 * mu * T::half();
            if z4 <= self.cap + tol {
                out.push(Candidate {
                    t: self.r * z3 / (z3 + mu),
                    z3,
                    z4,
                    mu,
                    gamma: T::zero(),
                    branch: ConeBranch { cap_active: false, cone_active: true, z3: pos },
                });
            }
        }

        // Cap active, cone inactive.
        let kk = k2 * self.cap;
        if self.a4 >= self.cap - tol && r2 <= kk * free_z3 + tol {
            out.push(Candidate {
                t: self.r,
                z3: free_z3,
                z4: self.cap,
                mu: T::zero(),
                gamma: (T::two() * (self.a4 - self.cap)).max(T::zero()),
                branch: ConeBranch { cap_active: true, cone_active: false, z3: free_pos },
            });
        }

        // Cap active, cone active, z3 strictly inside its bounds:
        // z3·(K + 2z3 − 2a3)² = K·r² on z3 ≥ max(a3, 0).
        let left = self.lo.max(self.a3);
        if left <= self.hi && self.r > T::zero() {
            let phi = |z: T| {
                let w = kk + T::two() * z - T::two() * self.a3;
                (z * w * w - kk * r2, w * w + T::of(4.0) * z * w)
            };
            if phi(left).0 <= T::zero() && phi(self.hi).0 >= T::zero() {
                let z3 = bracketed_root(phi, left, self.hi);
                let mu = T::two() * z3 * (z3 - self.a3) / kk;
                let gamma = k2 * mu - T::two() * (self.cap - self.a4);
                if mu > T::zero() && gamma >= -tol {
                    out.push(Candidate {
                        t: self.r * z3 / (z3 + mu),
                        z3,
                        z4: self.cap,
                        mu,
                        gamma: gamma.max(T::zero()),
                        branch: ConeBranch { cap_active: true, cone_active: true, z3: Z3Position::Interior },
                    });
                }
            }
        }

        // Cap active, cone active, z3 at a bound b: μ = r·sqrt(b/K) − b.
        for (b, pos) in [(self.lo, Z3Position::Lower), (self.hi, Z3Position::Upper)] {
            let mu = self.r * (b / kk).sqrt() - b;
            if !(mu > T::zero()) {
                continue;
            }
            let gamma = k2 * mu - T::two() * (self.cap - self.a4);
            let bound_mult = match pos {
                Z3Position::Lower => self.h(b, mu),
                _ => -self.h(b, mu),
            };
            if gamma >= -tol && bound_mult >= -tol {
                out.push(Candidate {
                    t: (b * kk).sqrt(),
                    z3: b,
                    z4: self.cap,
                    mu,
                    gamma: gamma.max(T::zero()),
                    branch: ConeBranch { cap_active: true, cone_active: true, z3: pos },
                });
            }
        }
        out
    }
}

/// Exact projection for the consensus block of one node and scenario.
pub fn project_cone_box<T: Scalar>(inst: &ConeBoxInstance<T>) -> Result<ConeBoxSolution<T>, ClosedFormError> {
    let valid = inst.c.iter().all(|c| c.is_finite())
        && inst.k2 > T::zero()
        && inst.z3_min > T::zero()
        && inst.z3_min <= inst.z3_max
        && inst.z4_max > T::zero()
        && inst.z3_max.is_finite()
        && inst.z4_max.is_finite();
    if !valid {
        return Err(ClosedFormError::BadInstance { detail: dump(inst) });
    }
    let a: [T; 4] = inst.c.map(|c| -c * T::half());
    let r = a[0].hypot(a[1]);
    let scale = T::one() + r * r + a[2].abs() + a[3].abs() + inst.z3_max + inst.z4_max;
    let red = Reduced {
        r,
        a3: a[2],
        a4: a[3],
        k2: inst.k2,
        lo: inst.z3_min,
        hi: inst.z3_max,
        cap: inst.z4_max,
        tol: T::of(1e-9) * scale,
    };
    let best = red
        .candidates()
        .into_iter()
        .map(|c| (red.objective(&c), c))
        .min_by(|x, y| x.0.partial_cmp(&y.0).expect("finite objective"))
        .map(|(_, c)| c)
        .ok_or_else(|| ClosedFormError::NoKktCase { dump: dump(inst) })?;

    // Rounding-level touch-up so the returned point is feasible.
    let z3 = clamp(best.z3, inst.z3_min, inst.z3_max);
    let z4 = best.z4.min(inst.z4_max);
    let t_max = (inst.k2 * z3 * z4.max(T::zero())).sqrt();
    let t = best.t.max(T::zero()).min(t_max);
    let (z1, z2) = if r > T::zero() { (t * a[0] / r, t * a[1] / r) } else { (T::zero(), T::zero()) };
    Ok(ConeBoxSolution {
        z: [z1, z2, z3, z4],
        branch: best.branch,
        mu: best.mu,
        gamma: best.gamma,
    })
}

fn dump<T: Scalar>(inst: &ConeBoxInstance<T>) -> String {
    let f = |v: T| v.to_f64_lossy();
    serde_json::json!({
        "c": inst.c.map(f),
        "k2": f(inst.k2),
        "z3_min": f(inst.z3_min),
        "z3_max": f(inst.z3_max),
        "z4_max": f(inst.z4_max),
    })
    .to_string()
}

/// Inputs to the `(P̃, Q̃, ṽ, l̃)` update of a non-root node, in unscaled
/// variables. Each `*_sum` collects the copies of that variable plus the
/// matching multipliers divided by `ρ`; `v_copies` is `1 + |C_i|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowBlockInput<T> {
    pub p_sum: T,
    pub q_sum: T,
    pub v_sum: T,
    pub l_sum: T,
    pub v_copies: usize,
    pub v_min: T,
    pub v_max: T,
    pub l_max: T,
}

/// Minimizes `Σ_k ½(P̃ − P_k)² + … ` over the cone and box in the original
/// variables. Returns `[P̃, Q̃, ṽ, l̃]` and the active branch.
pub fn project_flow_block<T: Scalar>(input: &FlowBlockInput<T>) -> Result<([T; 4], ConeBranch), ClosedFormError> {
    let f = (T::of(input.v_copies as f64) * T::half()).sqrt();
    let inst = ConeBoxInstance {
        c: [-input.p_sum, -input.q_sum, -input.v_sum / f, -input.l_sum],
        k2: T::one() / f,
        z3_min: f * input.v_min,
        z3_max: f * input.v_max,
        z4_max: input.l_max,
    };
    let sol = project_cone_box(&inst)?;
    Ok(([sol.z[0], sol.z[1], sol.z[2] / f, sol.z[3]], sol.branch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn golden(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - inv_phi * (hi - lo);
        let mut x2 = lo + inv_phi * (hi - lo);
        let mut f1 = f(x1);
        let mut f2 = f(x2);
        for _ in 0..90 {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = f(x2);
            }
        }
        let x = 0.5 * (lo + hi);
        (x, f(x))
    }

    /// Independent minimizer: for fixed `(z3, z4)` the best `(z1, z2)` is the
    /// radial shrink of `−(c1, c2)/2` onto the disc, which leaves a convex
    /// function of `(z3, z4)` minimized by nested golden-section search.
    /// Returns the optimal value of `Σ (z_i² + c_i z_i)`.
    fn oracle_value(inst: &ConeBoxInstance<f64>) -> f64 {
        let a = inst.c.map(|c| -c / 2.0);
        let r = a[0].hypot(a[1]);
        let reduced = |z3: f64, z4: f64| {
            let t = r.min((inst.k2 * z3 * z4).sqrt());
            (t - r).powi(2) + (z3 - a[2]).powi(2) + (z4 - a[3]).powi(2)
        };
        let inner = |z3: f64| golden(|z4| reduced(z3, z4), 0.0, inst.z4_max).1;
        let (_, best) = golden(inner, inst.z3_min, inst.z3_max);
        best - a.iter().map(|v| v * v).sum::<f64>()
    }

    fn value(inst: &ConeBoxInstance<f64>, z: &[f64; 4]) -> f64 {
        (0..4).map(|i| z[i] * z[i] + inst.c[i] * z[i]).sum()
    }

    fn max_violation(inst: &ConeBoxInstance<f64>, z: &[f64; 4]) -> f64 {
        let cone = z[0] * z[0] + z[1] * z[1] - inst.k2 * z[2] * z[3];
        [inst.z3_min - z[2], z[2] - inst.z3_max, z[3] - inst.z4_max, cone]
            .into_iter()
            .fold(0.0, f64::max)
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> ConeBoxInstance<f64> {
        let lo = rng.random_range(0.3..1.2);
        let hi = lo + rng.random_range(0.0..0.6);
        let z4_max = rng.random_range(0.2..2.0);
        let k2 = rng.random_range(0.4..1.5);
        let a3 = rng.random_range(lo - 1.0..hi + 1.0);
        let a4 = rng.random_range(-1.0..z4_max + 1.5);
        let r = rng.random_range(0.0f64..2.5).powi(2);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        ConeBoxInstance {
            c: [-2.0 * r * theta.cos(), -2.0 * r * theta.sin(), -2.0 * a3, -2.0 * a4],
            k2,
            z3_min: lo,
            z3_max: hi,
            z4_max,
        }
    }

    #[test]
    fn unconstrained_minimizer_is_returned() {
        let inst = ConeBoxInstance { c: [0.0, 0.0, -2.0 * 1.02, -2.0 * 0.3], k2: 0.8, z3_min: 0.9, z3_max: 1.1, z4_max: 1.0 };
        let sol = project_cone_box(&inst).unwrap();
        assert_eq!(sol.z, [0.0, 0.0, 1.02, 0.3]);
        assert_eq!(sol.branch, ConeBranch { cap_active: false, cone_active: false, z3: Z3Position::Interior });
    }

    #[test]
    fn lower_bound_branch_with_explicit_multiplier() {
        let inst = ConeBoxInstance { c: [-4.0f64, 0.0, 0.0, -2.0], k2: 1.0, z3_min: 1.0, z3_max: 2.0, z4_max: 1.0 };
        let sol = project_cone_box(&inst).unwrap();
        let expect = [1.0, 0.0, 1.0, 1.0];
        for i in 0..4 {
            assert!((sol.z[i] - expect[i]).abs() < 1e-12, "{:?}", sol.z);
        }
        assert!((sol.mu - 1.0).abs() < 1e-12);
        assert_eq!(sol.branch, ConeBranch { cap_active: true, cone_active: true, z3: Z3Position::Lower });
        assert!((sol.z[0] * sol.z[0] / sol.z[2] - 1.0).abs() < 1e-12);
        assert!((value(&inst, &sol.z) - oracle_value(&inst)).abs() < 1e-6);
    }

    #[test]
    fn random_instances_match_oracle_and_cover_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen = [false; ConeBranch::COUNT];
        for _ in 0..400 {
            let inst = random_instance(&mut rng);
            let sol = project_cone_box(&inst).unwrap();
            seen[sol.branch.index()] = true;
            assert!(max_violation(&inst, &sol.z) <= 1e-10, "{inst:?} {sol:?}");
            let ours = value(&inst, &sol.z);
            let best = oracle_value(&inst);
            assert!(ours <= best + 1e-8, "{inst:?}: {ours} vs {best}");
            assert!((ours - best).abs() <= 1e-6);
        }
        assert!(seen.iter().all(|&s| s), "uncovered branches: {seen:?}");
    }

    #[test]
    fn f32_projection_is_feasible() {
        let inst = ConeBoxInstance { c: [-4.0f32, 1.0, -1.0, -3.0], k2: 0.9, z3_min: 0.9, z3_max: 1.2, z4_max: 1.0 };
        let sol = project_cone_box(&inst).unwrap();
        let [z1, z2, z3, z4] = sol.z;
        assert!(z1 * z1 + z2 * z2 <= inst.k2 * z3 * z4 * (1.0 + 1e-5));
    }

    #[test]
    fn flow_block_scaling_matches_direct_minimization() {
        // Node with two children: the voltage enters three couplings.
        let input = FlowBlockInput { p_sum: 0.5, q_sum: 0.2, v_sum: 2.9, l_sum: 0.1, v_copies: 3, v_min: 0.9025, v_max: 1.1025, l_max: 25.92 };
        let (z, _) = project_flow_block(&input).unwrap();
        // Objective in original variables: P̃² − p_sum·P̃ + … + 1.5ṽ² − v_sum·ṽ.
        let obj = |p: f64, q: f64, v: f64, l: f64| {
            p * p - input.p_sum * p + q * q - input.q_sum * q + 1.5 * v * v - input.v_sum * v + l * l - input.l_sum * l
        };
        assert!(z[0] * z[0] + z[1] * z[1] <= z[2] * z[3] + 1e-12);
        let base = obj(z[0], z[1], z[2], z[3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let v = rng.random_range(input.v_min..input.v_max);
            let l = rng.random_range(0.0..1.0);
            let p = rng.random_range(-1.0..1.0);
            let q = rng.random_range(-1.0..1.0);
            if p * p + q * q <= v * l {
                assert!(obj(p, q, v, l) >= base - 1e-12);
            }
        }
    }

    fn rotate(c: [f64; 4], th: f64) -> [f64; 4] {
        let (s, co) = th.sin_cos();
        [co * c[0] - s * c[1], s * c[0] + co * c[1], c[2], c[3]]
    }

    proptest! {
        #[test]
        fn rotation_equivariance(seed in any::<u64>(), th in prop::sample::select(vec![
            std::f64::consts::FRAC_PI_2, std::f64::consts::PI, 0.7318,
        ])) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng);
            let base = project_cone_box(&inst).unwrap();
            let turned = ConeBoxInstance { c: rotate(inst.c, th), ..inst };
            let sol = project_cone_box(&turned).unwrap();
            let expect = rotate(base.z, th);
            for i in 0..4 {
                prop_assert!((sol.z[i] - expect[i]).abs() <= 1e-9 * (1.0 + expect[i].abs()));
            }
        }

        #[test]
        fn output_is_feasible_and_not_worse_than_oracle(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = random_instance(&mut rng);
            let sol = project_cone_box(&inst).unwrap();
            prop_assert!(max_violation(&inst, &sol.z) <= 1e-10);
            prop_assert!(value(&inst, &sol.z) <= oracle_value(&inst) + 1e-8);
        }
    }
}
