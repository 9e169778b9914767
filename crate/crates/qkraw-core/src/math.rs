//! Thin float shims so the crate builds without `std`.

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn fabs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn round(x: f64) -> f64 {
    libm::round(x)
}

pub fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

/// Integer power by repeated squaring; exactish for the desk-scale
/// exponents (|n| <= ~100) used here.
pub fn powi(x: f64, n: i64) -> f64 {
    if n < 0 {
        return 1.0 / powi(x, -n);
    }
    let mut base = x;
    let mut e = n as u64;
    let mut acc = 1.0;
    while e > 0 {
        if e & 1 == 1 {
            acc *= base;
        }
        base *= base;
        e >>= 1;
    }
    acc
}

/// `q^(e/2)` for an integer `e` (possibly odd or negative).
pub fn pow_half(q: f64, e: i64) -> f64 {
    if e % 2 == 0 {
        powi(q, e / 2)
    } else {
        powi(sqrt(q), e)
    }
}
