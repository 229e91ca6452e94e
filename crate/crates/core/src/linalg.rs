//! Dense symmetric positive-definite helpers (row-major storage).

use crate::error::{Error, Result};

/// Pivots at or below this fraction of their original diagonal entry are
/// treated as zero, so rank-deficient Gram matrices are reported as such
/// instead of leaving a roundoff-sized pivot.
pub const PIVOT_RTOL: f64 = 1e-12;

/// In-place lower Cholesky factor `A = L L^T`; the strict upper triangle is
/// left untouched and ignored by [`cholesky_solve`].
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (i * n, j * n);
            let dot: f64 = a[li..li + j].iter().zip(&a[lj..lj + j]).map(|(x, y)| x * y).sum();
            let v = a[li + j] - dot;
            if i == j {
                if !(v > PIVOT_RTOL * a[li + i]) || !v.is_finite() {
                    return Err(Error::numerical(format!(
                        "matrix not positive definite at pivot {i} (value {v:e})"
                    )));
                }
                a[li + i] = v.sqrt();
            } else {
                a[li + j] = v / a[lj + j];
            }
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` in place given the factor from [`cholesky_in_place`].
pub fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let dot: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - dot) / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut acc = b[i];
        for k in i + 1..n {
            acc -= l[k * n + i] * b[k];
        }
        b[i] = acc / l[i * n + i];
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        // A = M^T M + I for a fixed M
        let m = [1.0, 2.0, 0.0, -1.0, 3.0, 1.0, 0.5, 0.0, 2.0];
        let n = 3;
        let mut a = vec![0.0; 9];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| m[k * n + i] * m[k * n + j]).sum::<f64>()
                    + if i == j { 1.0 } else { 0.0 };
            }
        }
        let orig = a.clone();
        cholesky_in_place(&mut a, n).unwrap();
        let mut x = vec![1.0, -2.0, 0.5];
        let b = x.clone();
        cholesky_solve(&a, n, &mut x);
        for i in 0..n {
            let ax: f64 = (0..n).map(|j| orig[i * n + j] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = vec![1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_in_place(&mut a, 2).is_err());
    }
}
