//! Small dense row-major matrix helpers for the estimators. Design matrices
//! here have a handful of columns, so plain loops beat a general-purpose
//! linear algebra dependency.

/// Lower Cholesky factor of a symmetric positive-definite `dim × dim` matrix,
/// or `None` if a pivot is not strictly positive.
pub fn cholesky(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), dim * dim);
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= l[i * dim + k] * l[j * dim + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                l[i * dim + i] = s.sqrt();
            } else {
                l[i * dim + j] = s / l[j * dim + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` in place given the lower factor.
pub fn cholesky_solve(l: &[f64], dim: usize, b: &mut [f64]) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in i + 1..dim {
            s -= l[k * dim + i] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: &[f64], dim: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, dim)?;
    let mut inv = vec![0.0; dim * dim];
    let mut col = vec![0.0; dim];
    for j in 0..dim {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve(&l, dim, &mut col);
        for i in 0..dim {
            inv[i * dim + j] = col[i];
        }
    }
    Some(inv)
}

/// Solves `A x = b` in place by Gaussian elimination with partial pivoting.
/// `a` is overwritten. Returns `false` if `A` is numerically singular.
pub fn lu_solve(a: &mut [f64], dim: usize, b: &mut [f64]) -> bool {
    for col in 0..dim {
        let pivot = (col..dim)
            .max_by(|&i, &j| a[i * dim + col].abs().total_cmp(&a[j * dim + col].abs()))
            .unwrap_or(col);
        if !(a[pivot * dim + col].abs() > 1e-300) {
            return false;
        }
        if pivot != col {
            for k in 0..dim {
                a.swap(col * dim + k, pivot * dim + k);
            }
            b.swap(col, pivot);
        }
        let d = a[col * dim + col];
        for i in col + 1..dim {
            let f = a[i * dim + col] / d;
            if f == 0.0 {
                continue;
            }
            for k in col..dim {
                a[i * dim + k] -= f * a[col * dim + k];
            }
            b[i] -= f * b[col];
        }
    }
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in i + 1..dim {
            s -= a[i * dim + k] * b[k];
        }
        b[i] = s / a[i * dim + i];
    }
    true
}

/// `A B A` for square matrices (the sandwich product when `A` is symmetric).
pub fn sandwich(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut ab = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            for j in 0..dim {
                ab[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let abik = ab[i * dim + k];
            for j in 0..dim {
                out[i * dim + j] += abik * a[k * dim + j];
            }
        }
    }
    out
}

/// Adds `w · x xᵀ` to the symmetric accumulator `acc`.
#[inline]
pub fn add_outer(acc: &mut [f64], x: &[f64], w: f64) {
    let dim = x.len();
    for i in 0..dim {
        let wxi = w * x[i];
        for j in 0..dim {
            acc[i * dim + j] += wxi * x[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_known_matrix() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let inv = spd_inverse(&a, 2).unwrap();
        let det = 8.0;
        let expected = [3.0 / det, -2.0 / det, -2.0 / det, 4.0 / det];
        for (x, y) in inv.iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        assert!(cholesky(&[0.0], 1).is_none());
    }

    #[test]
    fn solve_round_trip() {
        let a = [6.0, 2.0, 1.0, 2.0, 5.0, 2.0, 1.0, 2.0, 4.0];
        let l = cholesky(&a, 3).unwrap();
        let mut b = [1.0, -2.0, 3.0];
        cholesky_solve(&l, 3, &mut b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * b[j]).sum();
            assert!((r - [1.0, -2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn lu_solve_needs_pivoting() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|k| a[i * 3 + k] * x[k]).sum()).collect();
        assert!(lu_solve(&mut a, 3, &mut b));
        for (g, w) in b.iter().zip(x) {
            assert!((g - w).abs() < 1e-14);
        }
        let mut singular = vec![1.0, 2.0, 2.0, 4.0];
        assert!(!lu_solve(&mut singular, 2, &mut [1.0, 1.0]));
    }
}
