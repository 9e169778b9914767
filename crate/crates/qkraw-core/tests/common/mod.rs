//! Shared test-only numerics: a cyclic Jacobi eigenvalue solver for small
//! symmetric matrices, used as an independent spectrum oracle.

use qkraw_core::oscillator::DenseOperator;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &DenseOperator) -> Vec<f64> {
    let n = m.dim();
    let mut a = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            a[r * n + c] = m.get(r, c);
        }
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for r in 0..n {
            for c in (r + 1)..n {
                off += a[r * n + c] * a[r * n + c];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let (app, aqq) = (a[p * n + p], a[q * n + q]);
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}
