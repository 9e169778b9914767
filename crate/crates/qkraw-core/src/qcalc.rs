//! Scalar q-calculus kernel.
//!
//! Conventions: the deformation parameter satisfies `0 < q < 1`; q-Pochhammer
//! symbols are `(a;q)_n = (1-a)(1-aq)...(1-aq^{n-1})` and infinite products
//! truncate once the deviation factor `|a| q^k` drops below the series
//! cutoff (geometric tail bound). All q-Pochhammers are computed by direct
//! product loops; desk-scale sizes (N <= ~64) need no log-space tricks.

use crate::math;
use crate::{Error, Result};
use alloc::format;

/// Threshold below which `(z;q)_inf` is treated as a pole of `e_q`.
pub const POLE_EPS: f64 = 1e-13;

/// Residual thresholds used by identity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    /// Relative residual threshold for identity checks.
    pub rel: f64,
    /// Tail cutoff for infinite products.
    pub series_eps: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-9,
            series_eps: 1e-16,
        }
    }
}

/// Binomial coefficient C(n, 2) = n(n-1)/2 as an integer, for exponent bookkeeping.
pub fn binom2(n: i64) -> i64 {
    n * (n - 1) / 2
}

/// Shifted factorial (Pochhammer symbol) `(a)_n = a(a+1)...(a+n-1)`, `(a)_0 = 1`.
pub fn pochhammer(a: f64, n: u32) -> f64 {
    let mut p = 1.0;
    for k in 0..n {
        p *= a + k as f64;
    }
    p
}

/// Terminating generalized hypergeometric sum
/// `sum_{k=0..kmax} prod_i (a_i)_k / (k! prod_j (b_j)_k) z^k`.
///
/// The caller guarantees termination (a numerator parameter `-m` with
/// `m <= kmax`, or an explicit cap). Errors if a denominator Pochhammer
/// vanishes at a live term.
pub fn hypergeometric_terminating(num: &[f64], den: &[f64], z: f64, kmax: u32) -> Result<f64> {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..kmax {
        let kf = k as f64;
        let mut fnum = 1.0;
        for &a in num {
            fnum *= a + kf;
        }
        let mut fden = kf + 1.0;
        for &b in den {
            fden *= b + kf;
        }
        if fnum == 0.0 {
            // a numerator Pochhammer has terminated; all later terms vanish
            break;
        }
        if fden == 0.0 {
            return Err(Error::Domain(format!(
                "hypergeometric denominator vanishes at term k={}",
                k + 1
            )));
        }
        term *= fnum / fden * z;
        sum += term;
        if term == 0.0 {
            break;
        }
    }
    Ok(sum)
}

/// q-Pochhammer symbol `(a;q)_n`.
pub fn q_pochhammer(a: f64, q: f64, n: u32) -> f64 {
    let mut p = 1.0;
    let mut aq = a;
    for _ in 0..n {
        p *= 1.0 - aq;
        aq *= q;
    }
    p
}

/// Ratio `(a;q)_n / (a;q)_m` for `m <= n`, computed as the product of the
/// surviving factors (avoids 0/0 when the shared prefix vanishes).
pub fn q_pochhammer_ratio(a: f64, q: f64, n: u32, m: u32) -> f64 {
    debug_assert!(m <= n);
    let mut p = 1.0;
    let mut aq = a * math::powi(q, m as i64);
    for _ in m..n {
        p *= 1.0 - aq;
        aq *= q;
    }
    p
}

/// Infinite q-Pochhammer `(a;q)_inf`, truncated once `|a| q^k < eps`.
pub fn q_pochhammer_inf(a: f64, q: f64, eps: f64) -> f64 {
    let mut p = 1.0;
    let mut aq = a;
    while math::fabs(aq) >= eps {
        p *= 1.0 - aq;
        if p == 0.0 {
            return 0.0;
        }
        aq *= q;
    }
    p
}

/// Little q-exponential `e_q(z) = 1 / (z;q)_inf`.
///
/// The product form is used rather than the series so arguments with
/// `|z| >= 1` (which occur as `theta^2 q^{-n}`) are handled.
pub fn q_exp_little(z: f64, q: f64) -> Result<f64> {
    let p = q_pochhammer_inf(z, q, Tolerance::default().series_eps);
    if math::fabs(p) < POLE_EPS {
        return Err(Error::Pole(format!("e_q pole: (z;q)_inf ~ 0 at z={z}")));
    }
    Ok(1.0 / p)
}

/// Big q-exponential `E_q(z) = (-z;q)_inf`.
pub fn q_exp_big(z: f64, q: f64) -> f64 {
    q_pochhammer_inf(-z, q, Tolerance::default().series_eps)
}

/// q-binomial coefficient `[N n]_q`; zero outside `0 <= n <= N`.
pub fn q_binomial(big_n: u32, n: i64, q: f64) -> f64 {
    if n < 0 || n > big_n as i64 {
        return 0.0;
    }
    let n = n as u32;
    q_pochhammer(q, q, big_n) / (q_pochhammer(q, q, n) * q_pochhammer(q, q, big_n - n))
}

/// q-multinomial coefficient `(q;q)_N / (prod_i (q;q)_{parts_i} (q;q)_{N-sum})`.
pub fn q_multinomial(big_n: u32, parts: &[u32], q: f64) -> Result<f64> {
    let sum: u32 = parts.iter().sum();
    if sum > big_n {
        return Err(Error::Domain(format!(
            "q_multinomial: parts sum {sum} exceeds N={big_n}"
        )));
    }
    let mut den = q_pochhammer(q, q, big_n - sum);
    for &p in parts {
        den *= q_pochhammer(q, q, p);
    }
    Ok(q_pochhammer(q, q, big_n) / den)
}

/// Finds the termination order of a basic hypergeometric series: the smallest
/// `m` with some numerator parameter equal to `q^{-m}` (within 1e-8 relative).
fn termination_order(num: &[f64], q: f64) -> Option<u32> {
    let mut best: Option<u32> = None;
    for &a in num {
        if a <= 0.0 {
            continue;
        }
        if math::fabs(a - 1.0) < 1e-8 {
            return Some(0);
        }
        if a < 1.0 {
            continue;
        }
        let m = math::round(math::ln(a) / -math::ln(q));
        if (0.0..1e6).contains(&m) {
            let m = m as u32;
            if math::fabs(a * math::powi(q, m as i64) - 1.0) < 1e-8 {
                best = Some(match best {
                    Some(b) if b <= m => b,
                    _ => m,
                });
            }
        }
    }
    best
}

/// Terminating basic hypergeometric series `r phi s (num; den; q, z)`:
///
/// `sum_k prod_i (a_i;q)_k / ((q;q)_k prod_j (b_j;q)_k) [(-1)^k q^C(k,2)]^{1+s-r} z^k`.
///
/// Some numerator parameter must equal `q^{-m}`; the sum runs to `k = m`.
pub fn basic_hypergeometric_terminating(num: &[f64], den: &[f64], q: f64, z: f64) -> Result<f64> {
    let kmax = termination_order(num, q).ok_or_else(|| {
        Error::Domain(format!(
            "basic hypergeometric series does not terminate (no numerator parameter is q^-m), num={num:?}"
        ))
    })?;
    let extra = 1 + den.len() as i64 - num.len() as i64;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut qk = 1.0; // q^k
    let mut qk1 = q; // q^{k+1}
    for k in 0..kmax {
        let mut fnum = 1.0;
        for &a in num {
            fnum *= 1.0 - a * qk;
        }
        let mut fden = 1.0 - qk1;
        for &b in den {
            fden *= 1.0 - b * qk;
        }
        if math::fabs(fden) < POLE_EPS {
            return Err(Error::Domain(format!(
                "basic hypergeometric denominator factor vanishes at live term k={}",
                k + 1
            )));
        }
        // ratio of the [(-1)^k q^C(k,2)]^{1+s-r} factors between k and k+1
        let sign = if extra % 2 == 0 { 1.0 } else { -1.0 };
        term *= fnum / fden * z * sign * math::powi(qk, extra);
        sum += term;
        if term == 0.0 {
            break;
        }
        qk = qk1;
        qk1 *= q;
    }
    Ok(sum)
}

/// Series form of the little q-exponential, `sum_n z^n / (q;q)_n` (valid for |z| < 1).
/// Kept as an independent cross-check of the product form.
pub fn q_exp_little_series(z: f64, q: f64, eps: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut qn = q;
    while math::fabs(term) >= eps {
        term *= z / (1.0 - qn);
        sum += term;
        qn *= q;
    }
    sum
}
