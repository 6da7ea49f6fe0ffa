//! Small dense linear algebra for m-by-m confusion systems.
//!
//! Class counts are tiny (tens at most), so plain Gaussian elimination with
//! partial pivoting is both adequate and easy to audit.

/// Row-major square matrix view helpers operate on `&[f64]` of length n*n.
pub(crate) fn mat_vec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
    }
    out
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
/// Returns None when a pivot degenerates to (near) zero.
pub(crate) fn solve(a: &[f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r, &s| m[r * n + col].abs().total_cmp(&m[s * n + col].abs()))
            .unwrap();
        if m[pivot_row * n + col].abs() < f64::MIN_POSITIVE * 16.0 {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            x.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in (col + 1)..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            x[row] -= factor * x[col];
        }
    }

    for col in (0..n).rev() {
        let mut acc = x[col];
        for k in (col + 1)..n {
            acc -= m[col * n + k] * x[k];
        }
        x[col] = acc / m[col * n + col];
    }
    Some(x)
}

/// Invert A by solving against each unit vector. None when singular.
pub(crate) fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = solve(a, n, &e)?;
        e[j] = 0.0;
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    Some(inv)
}

fn norm_1(a: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// 1-norm condition number ||A||_1 * ||A^-1||_1; infinity when singular.
pub(crate) fn condition_1norm(a: &[f64], n: usize) -> f64 {
    match invert(a, n) {
        Some(inv) => norm_1(a, n) * norm_1(&inv, n),
        None => f64::INFINITY,
    }
}

/// Solve the ridge problem min ||A t - b||^2 + lambda ||t||^2 through the
/// normal equations (A^T A + lambda I) t = A^T b.
pub(crate) fn solve_ridge(a: &[f64], n: usize, b: &[f64], lambda: f64) -> Option<Vec<f64>> {
    let mut ata = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[k * n + i] * a[k * n + j];
            }
            ata[i * n + j] = acc;
        }
    }
    for i in 0..n {
        ata[i * n + i] += lambda;
    }
    let mut atb = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            acc += a[k * n + i] * b[k];
        }
        atb[i] = acc;
    }
    solve(&ata, n, &atb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_known_system() {
        // [2 1; 1 3] x = [5; 10] -> x = [1; 3]
        let a = [2.0, 1.0, 1.0, 3.0];
        let x = solve(&a, 2, &[5.0, 10.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn solve_rejects_singular() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(solve(&a, 2, &[1.0, 2.0]).is_none());
    }

    #[test]
    fn inverse_roundtrip() {
        let a = [4.0, 1.0, 0.5, 2.0, 5.0, 1.0, 0.0, 1.0, 3.0];
        let inv = invert(&a, 3).unwrap();
        for i in 0..3 {
            let e: Vec<f64> = (0..3).map(|j| if i == j { 1.0 } else { 0.0 }).collect();
            let prod = mat_vec(&a, 3, &[inv[i], inv[3 + i], inv[6 + i]]);
            for j in 0..3 {
                assert!((prod[j] - e[j]).abs() < 1e-12, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn condition_of_identity_is_one() {
        let a = [1.0, 0.0, 0.0, 1.0];
        assert!((condition_1norm(&a, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_shrinks_toward_zero() {
        let a = [1.0, 0.0, 0.0, 1.0];
        let b = [2.0, -4.0];
        let t0 = solve_ridge(&a, 2, &b, 0.0).unwrap();
        assert!((t0[0] - 2.0).abs() < 1e-12 && (t0[1] + 4.0).abs() < 1e-12);
        let t = solve_ridge(&a, 2, &b, 1.0).unwrap();
        assert!((t[0] - 1.0).abs() < 1e-12 && (t[1] + 2.0).abs() < 1e-12);
    }
}
