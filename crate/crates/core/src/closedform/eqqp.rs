use serde::{Deserialize, Serialize};

use super::ClosedFormError;
use crate::scalar::Scalar;

/// `min ½xᵀAx + bᵀx  s.t.  Cx = d` with diagonal positive `A`.
///
/// `c` is stored row-major with `d.len()` rows of `a_diag.len()` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EqQpInstance<T: Scalar> {
    pub a_diag: Vec<T>,
    pub b: Vec<T>,
    pub c: Vec<T>,
    pub d: Vec<T>,
}

impl<T: Scalar> EqQpInstance<T> {
    pub fn cols(&self) -> usize {
        self.a_diag.len()
    }

    pub fn rows(&self) -> usize {
        self.d.len()
    }
}

/// Closed-form minimizer `x = A⁻¹(−b + CᵀF)` with `F` solving
/// `(CA⁻¹Cᵀ)F = d + CA⁻¹b`.
pub fn solve_equality_qp<T: Scalar>(inst: &EqQpInstance<T>) -> Result<Vec<T>, ClosedFormError> {
    let mut x = vec![T::zero(); inst.cols()];
    let mut work = EqQpWork::default();
    solve_equality_qp_into(&inst.a_diag, &inst.b, &inst.c, &inst.d, &mut x, &mut work)?;
    Ok(x)
}

/// Reusable buffers for [`solve_equality_qp_into`].
#[derive(Debug, Clone, Default)]
pub struct EqQpWork<T> {
    inv_a: Vec<T>,
    schur: Vec<T>,
    resid: Vec<T>,
}

/// Allocation-free form of [`solve_equality_qp`] writing the minimizer into `x`.
pub fn solve_equality_qp_into<T: Scalar>(
    a_diag: &[T],
    b: &[T],
    c: &[T],
    d: &[T],
    x: &mut [T],
    work: &mut EqQpWork<T>,
) -> Result<(), ClosedFormError> {
    let n = a_diag.len();
    let m = d.len();
    if b.len() != n || c.len() != n * m || x.len() != n {
        return Err(ClosedFormError::Shape {
            detail: format!("A has {n} entries, b {}, C {} for {m} rows, x {}", b.len(), c.len(), x.len()),
        });
    }
    if let Some(k) = a_diag.iter().position(|&a| !(a > T::zero()) || !a.is_finite()) {
        return Err(ClosedFormError::NonPositiveDiagonal { index: k });
    }
    let row = |i: usize| &c[i * n..(i + 1) * n];
    work.inv_a.clear();
    work.inv_a.extend(a_diag.iter().map(|&a| T::one() / a));
    let inv_a = &work.inv_a;

    // Unconstrained minimizer, then a correction along the row space of C.
    for k in 0..n {
        x[k] = -b[k] * inv_a[k];
    }
    if m == 0 {
        return Ok(());
    }

    work.schur.clear();
    work.schur.resize(m * m, T::zero());
    for i in 0..m {
        let ri = row(i);
        for j in 0..=i {
            let rj = row(j);
            let s: T = (0..n).map(|k| ri[k] * inv_a[k] * rj[k]).sum();
            work.schur[i * m + j] = s;
            work.schur[j * m + i] = s;
        }
    }
    cholesky_factor(&mut work.schur, m)?;

    // Two passes: the second one refines away the rounding left by the first.
    for _ in 0..2 {
        work.resid.clear();
        work.resid.extend((0..m).map(|i| {
            let r = row(i);
            d[i] - (0..n).map(|k| r[k] * x[k]).sum::<T>()
        }));
        cholesky_solve(&work.schur, m, &mut work.resid);
        let f = &work.resid;
        for k in 0..n {
            let ct_f: T = (0..m).map(|i| c[i * n + k] * f[i]).sum();
            x[k] = x[k] + inv_a[k] * ct_f;
        }
    }
    Ok(())
}

/// In-place lower-triangular Cholesky factor of a small SPD matrix.
fn cholesky_factor<T: Scalar>(a: &mut [T], m: usize) -> Result<(), ClosedFormError> {
    let max_diag = (0..m).map(|i| a[i * m + i]).fold(T::zero(), |acc, v| acc.max(v.abs()));
    let mut min_pivot = T::infinity();
    for j in 0..m {
        let mut diag = a[j * m + j];
        for k in 0..j {
            diag = diag - a[j * m + k] * a[j * m + k];
        }
        if !(diag > T::zero()) || !diag.is_finite() {
            return Err(ClosedFormError::RankDeficient { row: j });
        }
        min_pivot = min_pivot.min(diag);
        let pivot = diag.sqrt();
        a[j * m + j] = pivot;
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s = s - a[i * m + k] * a[j * m + k];
            }
            a[i * m + j] = s / pivot;
        }
    }
    let ratio = min_pivot / max_diag;
    if ratio < T::of(100.0) * T::epsilon() {
        return Err(ClosedFormError::SingularSchur {
            pivot_ratio: ratio.to_f64_lossy(),
        });
    }
    Ok(())
}

fn cholesky_solve<T: Scalar>(l: &[T], m: usize, y: &mut [T]) {
    for i in 0..m {
        let mut s = y[i];
        for k in 0..i {
            s = s - l[i * m + k] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = y[i];
        for k in i + 1..m {
            s = s - l[k * m + i] * y[k];
        }
        y[i] = s / l[i * m + i];
    }
}
