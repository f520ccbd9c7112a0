//! Small dense least squares via Householder QR, with a ridge fallback for
//! numerically rank-deficient systems.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative diagonal magnitude of `R` below which the system is treated as singular.
const RANK_TOL: f64 = 1e-10;
/// Ridge strength relative to `trace(XᵀX)/cols`.
const RIDGE_SCALE: f64 = 1e-6;

/// Solves `min ‖x·β − y‖₂` for column-major-free row-major `x[rows×cols]`.
///
/// Uses an unregularized QR solve when `R` is well conditioned; otherwise
/// re-solves the augmented system `[x; √λ·I] β ≈ [y; 0]`.
pub fn least_squares<T: Scalar>(x: &[T], rows: usize, cols: usize, y: &[T]) -> Result<Vec<T>> {
    assert_eq!(x.len(), rows * cols);
    assert_eq!(y.len(), rows);
    if cols == 0 {
        return Ok(Vec::new());
    }
    if rows >= cols {
        let mut a = x.to_vec();
        let mut b = y.to_vec();
        let diag = householder_qr(&mut a, &mut b, rows, cols);
        let max = diag.iter().fold(T::zero(), |m, d| m.max(d.abs()));
        let singular = max == T::zero()
            || diag
                .iter()
                .any(|d| d.abs().to_f64_lossy() <= RANK_TOL * max.to_f64_lossy());
        if !singular {
            return finite(back_substitute(&a, &diag, &b, cols));
        }
    }
    ridge(x, rows, cols, y)
}

fn ridge<T: Scalar>(x: &[T], rows: usize, cols: usize, y: &[T]) -> Result<Vec<T>> {
    let trace: f64 = x.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
    let lambda = RIDGE_SCALE * (trace / cols as f64).max(f64::MIN_POSITIVE);
    let sqrt_l = T::from_f64_lossy(lambda.sqrt());
    let aug_rows = rows + cols;
    let mut a = Vec::with_capacity(aug_rows * cols);
    a.extend_from_slice(x);
    for r in 0..cols {
        for c in 0..cols {
            a.push(if r == c { sqrt_l } else { T::zero() });
        }
    }
    let mut b = y.to_vec();
    b.resize(aug_rows, T::zero());
    let diag = householder_qr(&mut a, &mut b, aug_rows, cols);
    finite(back_substitute(&a, &diag, &b, cols))
}

fn finite<T: Scalar>(beta: Vec<T>) -> Result<Vec<T>> {
    if beta.iter().all(|v| v.is_finite()) {
        Ok(beta)
    } else {
        Err(Error::NonFinite("least-squares solution".into()))
    }
}

/// In-place Householder QR of `a[rows×cols]`, applying the reflectors to `b`.
/// Returns the diagonal of `R`; the strict upper triangle of `R` is left in `a`.
fn householder_qr<T: Scalar>(a: &mut [T], b: &mut [T], rows: usize, cols: usize) -> Vec<T> {
    let mut diag = vec![T::zero(); cols];
    let mut v = vec![T::zero(); rows];
    for k in 0..cols {
        let norm = (k..rows)
            .map(|r| a[r * cols + k] * a[r * cols + k])
            .sum::<T>()
            .sqrt();
        if norm == T::zero() {
            diag[k] = T::zero();
            continue;
        }
        let alpha = if a[k * cols + k] > T::zero() { -norm } else { norm };
        for r in k..rows {
            v[r] = a[r * cols + k];
        }
        v[k] -= alpha;
        let vnorm2: T = (k..rows).map(|r| v[r] * v[r]).sum();
        if vnorm2 == T::zero() {
            diag[k] = alpha;
            continue;
        }
        let two = T::from_f64_lossy(2.0);
        for c in k + 1..cols {
            let dot: T = (k..rows).map(|r| v[r] * a[r * cols + c]).sum();
            let f = two * dot / vnorm2;
            for r in k..rows {
                a[r * cols + c] -= f * v[r];
            }
        }
        let dot: T = (k..rows).map(|r| v[r] * b[r]).sum();
        let f = two * dot / vnorm2;
        for r in k..rows {
            b[r] -= f * v[r];
        }
        diag[k] = alpha;
    }
    diag
}

fn back_substitute<T: Scalar>(a: &[T], diag: &[T], b: &[T], cols: usize) -> Vec<T> {
    let mut beta = vec![T::zero(); cols];
    for k in (0..cols).rev() {
        let mut s = b[k];
        for c in k + 1..cols {
            s -= a[k * cols + c] * beta[c];
        }
        beta[k] = if diag[k] == T::zero() { T::zero() } else { s / diag[k] };
    }
    beta
}
