//! Quantum q-Krawtchouk polynomial families (univariate, bivariate, multivariate)
//! together with their q-oscillator matrix-element model.
//!
//! The crate has four layers:
//!
//! * [`qcalc`] — scalar q-calculus kernel: q-Pochhammer symbols, q-binomial and
//!   q-multinomial coefficients, q-exponentials, and terminating (basic)
//!   hypergeometric sums.
//! * [`polys`] — the polynomial families and matrix-element factor functions
//!   (`omega`, `sigma`, `xi`, `W`, `Sigma`, `Xi`) with their orthogonality weights.
//! * [`oscillator`] — an independent operator-level oracle built from truncated
//!   Fock-space matrices: q-oscillator generators, operator q-exponentials,
//!   q-rotation operators, and q-BCH conjugation checks.
//! * [`identities`] — the relation catalog and residual engine: orthogonality,
//!   duality, structure relations, difference equations and recurrences, each
//!   evaluated over the full admissible grid.
//!
//! The core is `no_std` (with `alloc`); IO, CLI and file formats live in the
//! companion `qkraw-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod identities;
mod math;
pub mod oscillator;
pub mod polys;
pub mod qcalc;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Scale-free residual between two scalars: `|l - r| / (1 + max(|l|, |r|))`.
///
/// This metric is meaningful across wildly varying entry magnitudes and is the
/// one used by every identity check in the crate.
pub fn rel_residual(l: f64, r: f64) -> f64 {
    let diff = math::fabs(l - r);
    let scale = 1.0 + math::fmax(math::fabs(l), math::fabs(r));
    diff / scale
}
