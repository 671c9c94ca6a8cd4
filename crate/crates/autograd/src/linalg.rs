//! Small dense symmetric positive-definite routines.

use crate::array::NumArray;
use crate::error::{dim_err, Error, Result};

/// Diagonal jitter added once when a factorization fails.
pub const SPD_JITTER: f64 = 1e-9;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
///
/// Only the lower triangle of `a` is read. Returns `None` when a pivot is
/// not strictly positive.
pub fn cholesky(a: &NumArray) -> Option<NumArray> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut l = NumArray::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Some(l)
}

/// Square-root-free Cholesky factorization `A = L D Lᵀ` with unit lower
/// triangular `L` (returned with its implicit unit diagonal) and pivots `D`.
/// Returns `None` when a pivot is not strictly positive.
pub fn ldl(a: &NumArray) -> Option<(NumArray, Vec<f64>)> {
    let n = a.rows();
    debug_assert_eq!(n, a.cols());
    let mut l = NumArray::identity(n);
    let mut d = vec![0.0; n];
    for j in 0..n {
        let mut dj = a.get(j, j);
        for k in 0..j {
            dj -= l.get(j, k) * l.get(j, k) * d[k];
        }
        if !(dj > 0.0) || !dj.is_finite() {
            return None;
        }
        d[j] = dj;
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k) * d[k];
            }
            l.set(i, j, s / dj);
        }
    }
    Some((l, d))
}

/// Inverse of an SPD matrix through its `L D Lᵀ` factorization.
///
/// If the first factorization fails, [`SPD_JITTER`] is added to the diagonal
/// and the factorization retried once.
pub fn spd_inverse(a: &NumArray) -> Result<NumArray> {
    let n = a.rows();
    if !a.is_matrix() || n != a.cols() {
        return Err(dim_err("spd_inverse", format!("{:?} is not square", a.shape())));
    }
    let (l, d) = match ldl(a) {
        Some(f) => f,
        None => {
            let mut jittered = a.clone();
            for i in 0..n {
                let v = jittered.get(i, i);
                jittered.set(i, i, v + SPD_JITTER);
            }
            ldl(&jittered).ok_or_else(|| Error::Numeric {
                op: "spd_inverse",
                detail: "matrix is not positive definite even after jitter".into(),
            })?
        }
    };
    // Solve L Y = I, scale by D⁻¹, then solve Lᵀ X = Y, column by column.
    let mut inv = NumArray::zeros(n, n);
    let mut col = vec![0.0; n];
    for c in 0..n {
        for i in 0..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l.get(i, k) * col[k];
            }
            col[i] = s;
        }
        for i in 0..n {
            col[i] /= d[i];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l.get(k, i) * col[k];
            }
            col[i] = s;
        }
        for i in 0..n {
            inv.set(i, c, col[i]);
        }
    }
    // Symmetrize away round-off.
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (inv.get(i, j) + inv.get(j, i));
            inv.set(i, j, m);
            inv.set(j, i, m);
        }
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs() {
        let a = NumArray::matrix(3, 3, vec![4., 12., -16., 12., 37., -43., -16., -43., 98.]).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l.data(), &[2., 0., 0., 6., 1., 0., -8., 5., 3.]);
        let back = l.matmul(&l.transposed()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn scaled_identity_inverts_exactly() {
        let inv = spd_inverse(&NumArray::identity(20).map(|v| 2.0 * v)).unwrap();
        assert_eq!(inv, NumArray::identity(20).map(|v| 0.5 * v));
    }

    #[test]
    fn ldl_reconstructs() {
        let a = NumArray::matrix(3, 3, vec![4., 12., -16., 12., 37., -43., -16., -43., 98.]).unwrap();
        let (l, d) = ldl(&a).unwrap();
        assert_eq!(d, vec![4., 1., 9.]);
        assert_eq!(l.data(), &[1., 0., 0., 3., 1., 0., -4., 5., 1.]);
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = NumArray::matrix(3, 3, vec![2., 0.5, 0.1, 0.5, 3., 0.2, 0.1, 0.2, 1.5]).unwrap();
        let inv = spd_inverse(&a).unwrap();
        let id = a.matmul(&inv).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn indefinite_matrix_fails() {
        let a = NumArray::matrix(2, 2, vec![1., 2., 2., 1.]).unwrap();
        assert!(cholesky(&a).is_none());
        assert!(spd_inverse(&a).is_err());
    }

    #[test]
    fn semidefinite_recovers_with_jitter() {
        // Rank one, so the second pivot is exactly zero before jitter.
        let a = NumArray::matrix(2, 2, vec![1., 1., 1., 1.]).unwrap();
        assert!(cholesky(&a).is_none());
        assert!(spd_inverse(&a).is_ok());
    }
}
