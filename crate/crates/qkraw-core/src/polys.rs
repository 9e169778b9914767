//! Polynomial families and matrix-element factor functions.
//!
//! Univariate: the classical Krawtchouk polynomial and the quantum
//! q-Krawtchouk polynomial `k_n(x;p,N;q)`, plus the matrix-element factors
//! `omega`, `sigma` and their product `xi`. Bivariate: the convolved product
//! `K_{n1,n2}`, the weight `W`, the normalization `Sigma`, and the matrix
//! element `Xi = W * Sigma * K`. Multivariate: the nested-index product of
//! univariate factors.
//!
//! Index conventions: every evaluator takes signed indices and returns exactly
//! 0 outside the admissible set (negative index, degree above the family size,
//! or partial sums above N). This makes the structure relations, which touch
//! boundary-adjacent indices, checkable uniformly on the closed grid.
//!
//! Square roots take the principal branch of the bracketed radicand with the
//! printed sign prefactors applied outside; parameters are validated so
//! radicands stay non-negative, otherwise a domain error is raised.

use crate::math;
use crate::qcalc::{
    self, binom2, q_binomial, q_multinomial, q_pochhammer, q_pochhammer_ratio,
};
use crate::{Error, Result};
use alloc::format;
use alloc::vec::Vec;

/// Parameters of the univariate family: deformation q, rotation angle theta,
/// and the sector size N. The polynomial parameter is p = theta^{-2}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParamsUni {
    pub q: f64,
    pub theta: f64,
    pub big_n: u32,
}

/// Parameters of the bivariate family: (q, theta, phi, N).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QParamsBi {
    pub q: f64,
    pub theta: f64,
    pub phi: f64,
    pub big_n: u32,
}

fn validate_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) || !q.is_finite() {
        return Err(Error::Domain(format!("q must lie in (0,1), got {q}")));
    }
    Ok(())
}

/// Angle guard: 0 < |t| < 1 and t^2 stays clear of every pole q^k, k = 0..N.
fn validate_angle(name: &str, t: f64, q: f64, big_n: u32) -> Result<()> {
    let a = math::fabs(t);
    if !(a > 0.0 && a < 1.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "{name} must satisfy 0 < |{name}| < 1, got {t}"
        )));
    }
    let t2 = t * t;
    for k in 0..=big_n {
        if math::fabs(t2 - math::powi(q, k as i64)) <= 1e-12 {
            return Err(Error::Pole(format!(
                "{name}^2 = {t2} collides with q^{k} (pole of a weight denominator)"
            )));
        }
    }
    Ok(())
}

impl QParamsUni {
    pub fn new(q: f64, theta: f64, big_n: u32) -> Result<Self> {
        validate_q(q)?;
        if big_n == 0 {
            return Err(Error::Domain("N must be a positive integer".into()));
        }
        validate_angle("theta", theta, q, big_n)?;
        Ok(QParamsUni { q, theta, big_n })
    }

    /// True when theta^2 < q^N, the subdomain where every weight is positive.
    pub fn positivity(&self) -> bool {
        self.theta * self.theta < math::powi(self.q, self.big_n as i64)
    }
}

impl QParamsBi {
    pub fn new(q: f64, theta: f64, phi: f64, big_n: u32) -> Result<Self> {
        validate_q(q)?;
        if big_n == 0 {
            return Err(Error::Domain("N must be a positive integer".into()));
        }
        validate_angle("theta", theta, q, big_n)?;
        validate_angle("phi", phi, q, big_n)?;
        Ok(QParamsBi {
            q,
            theta,
            phi,
            big_n,
        })
    }

    /// True when theta^2 < q^N and phi^2 < q^N, where all weights Delta are
    /// strictly positive.
    pub fn positivity(&self) -> bool {
        let qn = math::powi(self.q, self.big_n as i64);
        self.theta * self.theta < qn && self.phi * self.phi < qn
    }

    /// Re-validated copy with different angles and a shifted sector size.
    pub fn shifted(&self, theta: f64, phi: f64, dn: i64) -> Result<Self> {
        let n = self.big_n as i64 + dn;
        if n < 1 {
            return Err(Error::Domain(format!("shifted N = {n} is not positive")));
        }
        QParamsBi::new(self.q, theta, phi, n as u32)
    }
}

/// A d-tuple of non-negative integers with total at most N; the implicit
/// (d+1)-th entry is N minus the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiIndex {
    entries: Vec<u32>,
    big_n: u32,
}

impl MultiIndex {
    pub fn new(entries: Vec<u32>, big_n: u32) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Domain("multi-index needs at least one entry".into()));
        }
        let sum: u32 = entries.iter().sum();
        if sum > big_n {
            return Err(Error::Domain(format!(
                "multi-index entries sum to {sum} > N = {big_n}"
            )));
        }
        Ok(MultiIndex { entries, big_n })
    }

    pub fn d(&self) -> usize {
        self.entries.len()
    }

    pub fn big_n(&self) -> u32 {
        self.big_n
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    /// Partial sum |y_k| = y_1 + ... + y_k; |y_0| = 0 and |y_{d+1}| = N.
    pub fn partial_sum(&self, k: usize) -> i64 {
        if k > self.d() {
            self.big_n as i64
        } else {
            self.entries[..k].iter().map(|&e| e as i64).sum()
        }
    }

    /// The full (d+1)-tuple including the determined last entry.
    pub fn full(&self) -> Vec<u32> {
        let sum: u32 = self.entries.iter().sum();
        let mut v = self.entries.clone();
        v.push(self.big_n - sum);
        v
    }
}

/// Classical Krawtchouk polynomial kappa_n(x;p,N) = (-1)^n (-N)_n 2F1(-n,-x;-N;1/p).
pub fn kraw_classical(n: u32, x: u32, p: f64, big_n: u32) -> Result<f64> {
    let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
    let pre = sign * qcalc::pochhammer(-(big_n as f64), n);
    let series = qcalc::hypergeometric_terminating(
        &[-(n as f64), -(x as f64)],
        &[-(big_n as f64)],
        1.0 / p,
        n,
    )?;
    Ok(pre * series)
}

/// Quantum q-Krawtchouk polynomial
/// `k_n(x;p,N;q) = (-1)^n (q^{-N};q)_n q^{C(n,2)} 2phi1(q^{-n}, q^{-x}; q^{-N}; q, p q^{n+1})`.
///
/// Defined for any integer x (polynomial in q^{-x}); returns exactly 0 for
/// n < 0 or n > N (where the q-Pochhammer prefactor vanishes).
pub fn qkraw_uni(n: i64, x: i64, p: f64, q: f64, big_n: i64) -> f64 {
    if n < 0 || big_n < 0 || n > big_n {
        return 0.0;
    }
    if n == 0 {
        return 1.0;
    }
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let pre = sign * q_pochhammer(math::powi(q, -big_n), q, n as u32) * math::powi(q, binom2(n));
    // 2phi1 terminates at k = n via the q^{-n} numerator parameter; since
    // n <= N the denominator factor (1 - q^{k-N}) never vanishes on live terms
    let z = p * math::powi(q, n + 1);
    let qmn = math::powi(q, -n);
    let qmx = math::powi(q, -x);
    let qmbn = math::powi(q, -big_n);
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut qk = 1.0;
    for _ in 0..n {
        term *= (1.0 - qmn * qk) * (1.0 - qmx * qk)
            / ((1.0 - qk * q) * (1.0 - qmbn * qk))
            * z;
        sum += term;
        if term == 0.0 {
            break;
        }
        qk *= q;
    }
    pre * sum
}

/// Matrix-element factor `omega_x^{(N)}(theta)`: the x-th entry of the row
/// `<N;0|U(theta)` of the unitary q-rotation. Zero outside 0 <= x <= N.
pub fn omega(x: i64, big_n: i64, theta: f64, q: f64) -> Result<f64> {
    if x < 0 || big_n < 0 || x > big_n {
        return Ok(0.0);
    }
    let t2 = theta * theta;
    // (theta^2 q^{-N};q)_N / (theta^2 q^{-N};q)_x as the surviving factors
    let ratio = q_pochhammer_ratio(t2 * math::powi(q, -big_n), q, big_n as u32, x as u32);
    let radicand = q_binomial(big_n as u32, x, q) * ratio * math::powi(t2, x)
        * math::powi(q, -x * big_n);
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "omega radicand negative at x={x}, N={big_n} (outside positivity subdomain)"
        )));
    }
    let sign = if x % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * math::powi(q, binom2(x)) * math::sqrt(radicand))
}

/// Matrix-element factor `sigma_n^{(N)}(theta)` of the factorization
/// `xi = omega * sigma * k`.
pub fn sigma_coef(n: i64, big_n: i64, theta: f64, q: f64) -> Result<f64> {
    if n < 0 || big_n < 0 || n > big_n {
        return Err(Error::Domain(format!(
            "sigma requires 0 <= n <= N, got n={n}, N={big_n}"
        )));
    }
    let t2 = theta * theta;
    let radicand = q_binomial(big_n as u32, n, q) * math::powi(t2, n)
        * math::powi(q, -n * big_n)
        / q_pochhammer(t2 * math::powi(q, -n), q, n as u32);
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "sigma radicand negative at n={n}, N={big_n} (outside positivity subdomain)"
        )));
    }
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let pre = sign * math::powi(q, -binom2(n)) / q_pochhammer(math::powi(q, -big_n), q, n as u32);
    Ok(pre * math::sqrt(radicand))
}

/// Univariate matrix element
/// `xi_{n,x}^{(N)}(theta) = omega_x^{(N)} * sigma_n^{(N)} * k_n(x, theta^{-2}, N; q)`.
/// Zero outside 0 <= n, x <= N.
pub fn xi_uni(n: i64, x: i64, big_n: i64, theta: f64, q: f64) -> Result<f64> {
    if n < 0 || x < 0 || big_n < 0 || n > big_n || x > big_n {
        return Ok(0.0);
    }
    let w = omega(x, big_n, theta, q)?;
    let s = sigma_coef(n, big_n, theta, q)?;
    let k = qkraw_uni(n, x, 1.0 / (theta * theta), q, big_n);
    Ok(w * s * k)
}

/// Bivariate quantum q-Krawtchouk polynomial
/// `K_{n1,n2}(x1,x2) = k_{n1}(x1; theta^{-2}, x1+x2; q) k_{n2}(x1+x2-n1; phi^{-2}, N-n1; q)`.
/// Zero whenever an index is negative or a partial sum exceeds N.
pub fn qkraw_bi(n1: i64, n2: i64, x1: i64, x2: i64, p: &QParamsBi) -> f64 {
    let big_n = p.big_n as i64;
    if n1 < 0 || n2 < 0 || x1 < 0 || x2 < 0 || n1 + n2 > big_n || x1 + x2 > big_n {
        return 0.0;
    }
    let f1 = qkraw_uni(n1, x1, 1.0 / (p.theta * p.theta), p.q, x1 + x2);
    if f1 == 0.0 {
        return 0.0;
    }
    let f2 = qkraw_uni(n2, x1 + x2 - n1, 1.0 / (p.phi * p.phi), p.q, big_n - n1);
    f1 * f2
}

/// Orthogonality weight `W_{x1,x2}^{(N)}(theta,phi)`, the matrix element of
/// the bivariate q-rotation against the top state `<N;0,0|`.
pub fn weight_w(x1: i64, x2: i64, p: &QParamsBi) -> Result<f64> {
    let big_n = p.big_n as i64;
    if x1 < 0 || x2 < 0 || x1 + x2 > big_n {
        return Ok(0.0);
    }
    let q = p.q;
    let t2 = p.theta * p.theta;
    let f2 = p.phi * p.phi;
    let sign_in = if (big_n - x1) % 2 == 0 { 1.0 } else { -1.0 };
    let radicand = sign_in
        * math::powi(t2 / q, x1 + x2)
        * math::powi(q, binom2(x1))
        * q_multinomial(p.big_n, &[x1 as u32, x2 as u32], q)?
        * q_pochhammer(q / t2, q, x2 as u32)
        * q_pochhammer(q / f2, q, (big_n - x1 - x2) as u32)
        * math::powi(f2, big_n)
        * math::powi(q, -big_n * (big_n + 1) / 2);
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "W radicand negative at (x1,x2)=({x1},{x2}) (outside positivity subdomain)"
        )));
    }
    let sign = if x2 % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * math::sqrt(radicand))
}

/// Normalization factor `Sigma_{n1,n2}^{(N)}(theta,phi)` of the factorization
/// `Xi = W * Sigma * K`.
pub fn weight_sigma(n1: i64, n2: i64, p: &QParamsBi) -> Result<f64> {
    let big_n = p.big_n as i64;
    if n1 < 0 || n2 < 0 || n1 + n2 > big_n {
        return Ok(0.0);
    }
    let q = p.q;
    let t2 = p.theta * p.theta;
    let f2 = p.phi * p.phi;
    let sign_in = if (n1 + n2) % 2 == 0 { 1.0 } else { -1.0 };
    let e = big_n * (n1 + n2) + 2 * n1 + n2 - n1 * n2 - binom2(n1) - binom2(n2);
    let radicand = sign_in * q_multinomial(p.big_n, &[n1 as u32, n2 as u32], q)? * math::powi(q, e)
        / (q_pochhammer(q / f2, q, n2 as u32) * q_pochhammer(q / t2, q, n1 as u32));
    if radicand < 0.0 {
        return Err(Error::Domain(format!(
            "Sigma radicand negative at (n1,n2)=({n1},{n2})"
        )));
    }
    let sign = if n1 % 2 == 0 { 1.0 } else { -1.0 };
    let pre = math::powi(q, -binom2(n1) - binom2(n2)) * sign * math::powi(p.phi, -n1)
        * q_pochhammer(q, q, (big_n - n1 - n2) as u32)
        / q_pochhammer(q, q, p.big_n);
    Ok(pre * math::sqrt(radicand))
}

/// Bivariate matrix element via the convolution formula,
/// `Xi = xi_{n1,x1}^{(x1+x2)}(theta) * xi_{n2,x1+x2-n1}^{(N-n1)}(phi)`.
pub fn xi_bi(n1: i64, n2: i64, x1: i64, x2: i64, p: &QParamsBi) -> Result<f64> {
    let big_n = p.big_n as i64;
    if n1 < 0 || n2 < 0 || x1 < 0 || x2 < 0 || n1 + n2 > big_n || x1 + x2 > big_n {
        return Ok(0.0);
    }
    let f1 = xi_uni(n1, x1, x1 + x2, p.theta, p.q)?;
    if f1 == 0.0 {
        return Ok(0.0);
    }
    let f2 = xi_uni(n2, x1 + x2 - n1, big_n - n1, p.phi, p.q)?;
    Ok(f1 * f2)
}

/// Independent derivation of `Sigma` as `Xi_convolution / (W * K)` at the
/// admissible grid point maximizing `|W * K|`; used to cross-check the
/// intricate printed formula.
pub fn sigma_fallback(n1: i64, n2: i64, p: &QParamsBi) -> Result<f64> {
    let big_n = p.big_n as i64;
    let mut best = 0.0;
    let mut at = None;
    for x1 in 0..=big_n {
        for x2 in 0..=(big_n - x1) {
            let wk = weight_w(x1, x2, p)? * qkraw_bi(n1, n2, x1, x2, p);
            if math::fabs(wk) > math::fabs(best) {
                best = wk;
                at = Some((x1, x2));
            }
        }
    }
    let (x1, x2) = at.ok_or_else(|| {
        Error::Domain(format!(
            "no grid point with W*K != 0 for (n1,n2)=({n1},{n2})"
        ))
    })?;
    Ok(xi_bi(n1, n2, x1, x2, p)? / best)
}

/// Size/variable/degree triple of the k-th factor in the multivariate product.
fn multi_factor_indices(n: &MultiIndex, x: &MultiIndex, k: usize) -> Result<(i64, i64, i64)> {
    let deg = n.entries()[k - 1] as i64;
    let var = x.partial_sum(k) - n.partial_sum(k - 1);
    let size = x.partial_sum(k + 1) - n.partial_sum(k - 1);
    if size < 0 {
        return Err(Error::Domain(format!(
            "multivariate factor {k} has negative size {size}"
        )));
    }
    Ok((deg, var, size))
}

/// Multivariate quantum q-Krawtchouk polynomial: the nested product
/// `prod_k k_{n_k}(|x_k| - |n_{k-1}|, theta_k^{-2}, |x_{k+1}| - |n_{k-1}|; q)`.
pub fn qkraw_multi(n: &MultiIndex, x: &MultiIndex, thetas: &[f64], q: f64) -> Result<f64> {
    check_multi_args(n, x, thetas)?;
    let mut prod = 1.0;
    for k in 1..=n.d() {
        let (deg, var, size) = multi_factor_indices(n, x, k)?;
        prod *= qkraw_uni(deg, var, 1.0 / (thetas[k - 1] * thetas[k - 1]), q, size);
        if prod == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(prod)
}

/// Multivariate matrix element: the nested product of univariate xi factors.
pub fn xi_multi(n: &MultiIndex, x: &MultiIndex, thetas: &[f64], q: f64) -> Result<f64> {
    check_multi_args(n, x, thetas)?;
    let mut prod = 1.0;
    for k in 1..=n.d() {
        let (deg, var, size) = multi_factor_indices(n, x, k)?;
        prod *= xi_uni(deg, var, size, thetas[k - 1], q)?;
        if prod == 0.0 {
            return Ok(0.0);
        }
    }
    Ok(prod)
}

fn check_multi_args(n: &MultiIndex, x: &MultiIndex, thetas: &[f64]) -> Result<()> {
    if n.d() != x.d() || n.big_n() != x.big_n() {
        return Err(Error::Domain(
            "degree and variable multi-indices must share d and N".into(),
        ));
    }
    if thetas.len() != n.d() {
        return Err(Error::Domain(format!(
            "expected {} angles, got {}",
            n.d(),
            thetas.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rel_residual;
    use proptest::prelude::*;

    fn desk(big_n: u32) -> QParamsBi {
        QParamsBi::new(0.7, 0.15, 0.2, big_n).unwrap()
    }

    fn binom(n: u32, k: u32) -> f64 {
        let mut v = 1.0;
        for j in 0..k {
            v = v * (n - j) as f64 / (j + 1) as f64;
        }
        v
    }

    #[test]
    fn classical_values() {
        assert_eq!(kraw_classical(0, 3, 0.3, 6).unwrap(), 1.0);
        // n=1, x=0: series collapses to 1, prefactor (-1)(-N) = N
        assert!((kraw_classical(1, 0, 0.3, 6).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn classical_binomial_orthogonality() {
        let (big_n, p) = (6u32, 0.3f64);
        for n in 0..=big_n {
            for m in 0..=big_n {
                let mut s = 0.0;
                let mut norm = 0.0;
                for x in 0..=big_n {
                    let w = binom(big_n, x) * p.powi(x as i32) * (1.0 - p).powi((big_n - x) as i32);
                    let a = kraw_classical(n, x, p, big_n).unwrap();
                    let b = kraw_classical(m, x, p, big_n).unwrap();
                    s += w * a * b;
                    norm += w * a * a;
                }
                if n != m {
                    assert!(s.abs() / norm < 1e-10, "n={n} m={m} s={s}");
                }
            }
        }
    }

    #[test]
    fn qkraw_uni_values() {
        assert_eq!(qkraw_uni(0, 4, 2.0, 0.5, 5), 1.0);
        // x=0 collapses the series; n=1, N=2, q=1/2: (-1)(1 - q^{-2}) = 3
        assert!((qkraw_uni(1, 0, 2.0, 0.5, 2) - 3.0).abs() < 1e-14);
        // exact-rational hand sum: prefactor 3, series 1 + (1-2)(1-2)/((1-1/2)(1-4)) * 1/2 = 2/3
        assert!((qkraw_uni(1, 1, 2.0, 0.5, 2) - 2.0).abs() < 1e-14);
        // degree above the family size vanishes identically
        assert_eq!(qkraw_uni(3, 1, 2.0, 0.5, 2), 0.0);
        assert_eq!(qkraw_uni(-1, 1, 2.0, 0.5, 2), 0.0);
    }

    #[test]
    fn omega_values() {
        let (q, th, n) = (0.7, 0.2, 5i64);
        let t2 = th * th;
        let w0 = omega(0, n, th, q).unwrap();
        let oracle = q_pochhammer(t2 * crate::math::powi(q, -n), q, n as u32);
        assert!((w0 - oracle.sqrt()).abs() < 1e-14);
        // unit norm of the <N;0| row of a unitary operator
        let mut norm = 0.0;
        for x in 0..=n {
            let w = omega(x, n, th, q).unwrap();
            norm += w * w;
        }
        assert!((norm - 1.0).abs() < 1e-12);
        // theta -> 0 kills every x >= 1 entry through theta^{2x}
        assert!(omega(2, n, 1e-8, q).unwrap().abs() < 1e-12);
        assert_eq!(omega(-1, n, th, q).unwrap(), 0.0);
    }

    #[test]
    fn sigma_values() {
        let (q, th) = (0.7, 0.2);
        assert_eq!(sigma_coef(0, 4, th, q).unwrap(), 1.0);
        let top = sigma_coef(3, 3, th, q).unwrap();
        assert!(top.is_finite() && top != 0.0);
        assert!(sigma_coef(5, 4, th, q).is_err());
    }

    #[test]
    fn xi_uni_duality() {
        // positivity needs theta^2 < q^N: 0.0625 < 0.6^5 = 0.0778
        let (q, th, n) = (0.6, 0.25, 5i64);
        for a in 0..=n {
            for b in 0..=n {
                let l = xi_uni(a, b, n, th, q).unwrap();
                let r = xi_uni(n - b, n - a, n, th, q).unwrap();
                assert!(rel_residual(l, r) < 1e-12, "({a},{b}): {l} vs {r}");
            }
        }
    }

    #[test]
    fn xi_uni_orthonormal_rows() {
        let (q, th, n) = (0.7, 0.15, 5i64);
        for a in 0..=n {
            for b in 0..=n {
                let mut s = 0.0;
                for x in 0..=n {
                    s += xi_uni(a, x, n, th, q).unwrap() * xi_uni(b, x, n, th, q).unwrap();
                }
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-12, "({a},{b}): {s}");
            }
        }
    }

    #[test]
    fn qkraw_bi_reductions() {
        let p = desk(5);
        assert_eq!(qkraw_bi(0, 0, 2, 1, &p), 1.0);
        // n1 = 0 reduces to the univariate polynomial in x1+x2
        let v = qkraw_bi(0, 2, 1, 2, &p);
        let u = qkraw_uni(2, 3, 1.0 / (p.phi * p.phi), p.q, 5);
        assert!((v - u).abs() < 1e-14);
        assert_eq!(qkraw_bi(3, 3, 1, 1, &p), 0.0);
        assert_eq!(qkraw_bi(1, 1, 4, 2, &p), 0.0);
    }

    #[test]
    fn bivariate_orthogonality() {
        let p = desk(5);
        let n = p.big_n as i64;
        let mut pairs = Vec::new();
        for a in 0..=n {
            for b in 0..=(n - a) {
                pairs.push((a, b));
            }
        }
        for &(n1, n2) in &pairs {
            let h = 1.0 / weight_sigma(n1, n2, &p).unwrap().powi(2);
            for &(m1, m2) in &pairs {
                let hm = 1.0 / weight_sigma(m1, m2, &p).unwrap().powi(2);
                let mut s = 0.0;
                for x1 in 0..=n {
                    for x2 in 0..=(n - x1) {
                        let w = weight_w(x1, x2, &p).unwrap();
                        s += w * w
                            * qkraw_bi(n1, n2, x1, x2, &p)
                            * qkraw_bi(m1, m2, x1, x2, &p);
                    }
                }
                let expect = if (n1, n2) == (m1, m2) { h } else { 0.0 };
                let res = (s - expect).abs() / (h * hm).sqrt();
                assert!(res < 1e-9, "({n1},{n2}) vs ({m1},{m2}): residual {res}");
            }
        }
    }

    #[test]
    fn factorization_and_fallback() {
        let p = desk(4);
        let n = p.big_n as i64;
        for n1 in 0..=n {
            for n2 in 0..=(n - n1) {
                let sig = weight_sigma(n1, n2, &p).unwrap();
                let fb = sigma_fallback(n1, n2, &p).unwrap();
                assert!(rel_residual(sig, fb) < 1e-10, "({n1},{n2}): {sig} vs {fb}");
                for x1 in 0..=n {
                    for x2 in 0..=(n - x1) {
                        let xi = xi_bi(n1, n2, x1, x2, &p).unwrap();
                        let wsk = weight_w(x1, x2, &p).unwrap()
                            * sig
                            * qkraw_bi(n1, n2, x1, x2, &p);
                        assert!(
                            (xi - wsk).abs() <= 1e-9 * (1.0 + xi.abs()),
                            "({n1},{n2},{x1},{x2}): {xi} vs {wsk}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn positivity_subdomain() {
        let p = desk(5);
        assert!(p.positivity());
        let n = p.big_n as i64;
        for x1 in 0..=n {
            for x2 in 0..=(n - x1) {
                assert!(weight_w(x1, x2, &p).unwrap().powi(2) > 0.0);
            }
        }
        for n1 in 0..=n {
            for n2 in 0..=(n - n1) {
                assert!(weight_sigma(n1, n2, &p).unwrap().powi(2) > 0.0);
            }
        }
    }

    #[test]
    fn multi_reductions() {
        let (q, big_n) = (0.7, 4u32);
        // d = 1 reduces to the univariate polynomial
        let n = MultiIndex::new(alloc::vec![2], big_n).unwrap();
        let x = MultiIndex::new(alloc::vec![3], big_n).unwrap();
        let v = qkraw_multi(&n, &x, &[0.15], q).unwrap();
        let u = qkraw_uni(2, 3, 1.0 / (0.15 * 0.15), q, big_n as i64);
        assert!((v - u).abs() < 1e-14);
        // d = 2 reduces to the bivariate polynomial
        let p = desk(big_n);
        let n = MultiIndex::new(alloc::vec![1, 2], big_n).unwrap();
        let x = MultiIndex::new(alloc::vec![2, 1], big_n).unwrap();
        let v = qkraw_multi(&n, &x, &[p.theta, p.phi], q).unwrap();
        assert!((v - qkraw_bi(1, 2, 2, 1, &p)).abs() < 1e-13);
        let v = xi_multi(&n, &x, &[p.theta, p.phi], q).unwrap();
        assert!((v - xi_bi(1, 2, 2, 1, &p).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn multi_orthonormality_d3() {
        let (q, big_n, thetas) = (0.7, 3u32, [0.15, 0.2, 0.25]);
        let mut idx = Vec::new();
        for a in 0..=big_n {
            for b in 0..=(big_n - a) {
                for c in 0..=(big_n - a - b) {
                    idx.push(MultiIndex::new(alloc::vec![a, b, c], big_n).unwrap());
                }
            }
        }
        for n in &idx {
            for m in &idx {
                let mut s = 0.0;
                for x in &idx {
                    s += xi_multi(n, x, &thetas, q).unwrap() * xi_multi(m, x, &thetas, q).unwrap();
                }
                let expect = if n == m { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-10, "{n:?} vs {m:?}: {s}");
            }
        }
    }

    #[test]
    fn degenerate_top_corner() {
        // n = x = (N,0,...,0): first factor xi_{N,N}^{(N)}, the rest are 1x1 identities
        let (q, big_n) = (0.7, 3u32);
        let thetas = [0.15, 0.2, 0.25];
        let n = MultiIndex::new(alloc::vec![big_n, 0, 0], big_n).unwrap();
        let v = xi_multi(&n, &n, &thetas, q).unwrap();
        let u = xi_uni(big_n as i64, big_n as i64, big_n as i64, 0.15, q).unwrap();
        assert!((v - u).abs() < 1e-14);
    }

    #[test]
    fn param_validation() {
        assert!(QParamsBi::new(1.2, 0.15, 0.2, 4).is_err());
        assert!(QParamsBi::new(0.7, 0.0, 0.2, 4).is_err());
        assert!(QParamsBi::new(0.7, 0.15, 0.2, 0).is_err());
        // theta^2 exactly on a pole q^k is rejected
        let th = 0.7f64.powi(2).sqrt();
        assert!(matches!(
            QParamsBi::new(0.7, th, 0.2, 4),
            Err(Error::Pole(_))
        ));
        assert!(MultiIndex::new(alloc::vec![2, 2], 3).is_err());
    }

    proptest! {
        // duality holds across the admissible parameter range, not just desk values
        #[test]
        fn duality_random(q in 0.55f64..0.9, th in 0.05f64..0.25) {
            let n = 4i64;
            prop_assume!(th * th < q.powi(n as i32 + 1));
            for a in 0..=n {
                for b in 0..=n {
                    let l = xi_uni(a, b, n, th, q).unwrap();
                    let r = xi_uni(n - b, n - a, n, th, q).unwrap();
                    prop_assert!(rel_residual(l, r) < 1e-11);
                }
            }
        }

        // k_0 = 1 and K_{0,0} = 1 everywhere
        #[test]
        fn unit_ground_state(q in 0.3f64..0.9, x1 in 0i64..4, x2 in 0i64..3) {
            let p = QParamsBi::new(q, 0.15, 0.2, 6).unwrap();
            prop_assert_eq!(qkraw_bi(0, 0, x1, x2, &p), 1.0);
        }
    }
}
