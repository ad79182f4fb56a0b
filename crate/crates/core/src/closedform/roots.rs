use crate::scalar::Scalar;

/// Root of `f` on `[lo, hi]` where `f(lo)` and `f(hi)` have opposite signs
/// (or one of them vanishes). `f` returns `(value, derivative)`.
///
/// Newton steps are taken while they land inside the bracket and the step
/// length keeps halving; otherwise the step falls back to bisection.
pub(crate) fn bracketed_root<T: Scalar>(mut f: impl FnMut(T) -> (T, T), mut lo: T, mut hi: T) -> T {
    let (flo, _) = f(lo);
    if flo == T::zero() {
        return lo;
    }
    let (fhi, _) = f(hi);
    if fhi == T::zero() {
        return hi;
    }
    // Orient so that f(lo) < 0 < f(hi).
    if flo > T::zero() {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut x = lo + (hi - lo) * T::half();
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (mut fx, mut dfx) = f(x);
    let four_eps = T::of(4.0) * T::epsilon();
    for _ in 0..200 {
        if fx == T::zero() {
            return x;
        }
        let outside = ((x - hi) * dfx - fx) * ((x - lo) * dfx - fx) > T::zero();
        let slow = (T::two() * fx).abs() > (dx_old * dfx).abs();
        if !dfx.is_finite() || outside || slow {
            dx_old = dx;
            dx = (hi - lo) * T::half();
            x = lo + dx;
        } else {
            dx_old = dx;
            dx = fx / dfx;
            x = x - dx;
        }
        let scale = x.abs().max(T::min_positive_value().sqrt());
        if dx.abs() <= four_eps * scale {
            break;
        }
        (fx, dfx) = f(x);
        if fx < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
    }
    let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    x.max(a).min(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_root_of_two() {
        let r: f64 = bracketed_root(|x| (x * x * x - 2.0, 3.0 * x * x), 0.0, 2.0);
        assert!((r - 2f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn decreasing_function() {
        let r: f64 = bracketed_root(|x| (1.0 - x, -1.0), -5.0, 7.0);
        assert!((r - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_derivative_falls_back_to_bisection() {
        let r: f32 = bracketed_root(|x| (x.powi(3), 0.0), -1.0, 3.0);
        assert!(r.abs() < 1e-6);
    }
}
