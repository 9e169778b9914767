//! Operator-level oracle on truncated Fock spaces.
//!
//! Everything here is built from dense matrices over an explicit state
//! enumeration: q-oscillator generators, operator q-exponentials, the
//! four-factor q-rotation operators, and the catalog of conjugation
//! identities used to validate the q-BCH machinery.
//!
//! Two basis flavors exist. Fixed-sum sectors carry the irreducible
//! representations on which matrix elements are compared against the
//! closed-form polynomials; every rotation maps such a sector to itself
//! exactly. Capped spaces (total occupation <= cap) host the conjugation
//! checks, which involve single raising/lowering generators that change the
//! total; truncation then corrupts only rows/columns at the cap, so residuals
//! are taken over the interior sub-block.

use crate::math;
use crate::qcalc::{self, Tolerance};
use crate::{Error, Result};
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

/// Hard cap on basis dimension; larger requests are refused.
pub const DIM_CAP: usize = 20_000;

/// Ordered enumeration of multi-oscillator occupation states.
#[derive(Debug, PartialEq)]
pub struct SectorBasis {
    /// Number of oscillators.
    pub modes: usize,
    /// Occupation tuples, lexicographically ordered.
    pub states: Vec<Vec<u32>>,
    /// Total occupation bound (exact sum for fixed sectors, upper bound otherwise).
    pub total: u32,
    /// True when every state has occupation sum exactly `total`.
    pub fixed_sum: bool,
    index: BTreeMap<Vec<u32>, usize>,
}

impl SectorBasis {
    /// Fixed-N sector on d+1 oscillators: all tuples summing to exactly N,
    /// lexicographic in the first d entries (the last is determined).
    pub fn fixed(big_n: u32, d: usize) -> Result<Rc<Self>> {
        let mut states = Vec::new();
        let mut cur = vec![0u32; d + 1];
        enumerate(&mut states, &mut cur, 0, big_n, true)?;
        Self::finish(states, d + 1, big_n, true)
    }

    /// Truncated space: all tuples on `modes` oscillators with sum <= cap.
    pub fn capped(modes: usize, cap: u32) -> Result<Rc<Self>> {
        let mut states = Vec::new();
        let mut cur = vec![0u32; modes];
        enumerate(&mut states, &mut cur, 0, cap, false)?;
        Self::finish(states, modes, cap, false)
    }

    fn finish(states: Vec<Vec<u32>>, modes: usize, total: u32, fixed_sum: bool) -> Result<Rc<Self>> {
        let index = states
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        Ok(Rc::new(SectorBasis {
            modes,
            states,
            total,
            fixed_sum,
            index,
        }))
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn position(&self, state: &[u32]) -> Option<usize> {
        self.index.get(state).copied()
    }
}

fn enumerate(
    out: &mut Vec<Vec<u32>>,
    cur: &mut Vec<u32>,
    mode: usize,
    budget: u32,
    exact: bool,
) -> Result<()> {
    if mode == cur.len() - 1 && exact {
        cur[mode] = budget;
        push_state(out, cur)?;
        return Ok(());
    }
    if mode == cur.len() {
        push_state(out, cur)?;
        return Ok(());
    }
    let hi = budget;
    for v in 0..=hi {
        cur[mode] = v;
        enumerate(out, cur, mode + 1, budget - v, exact)?;
    }
    cur[mode] = 0;
    Ok(())
}

fn push_state(out: &mut Vec<Vec<u32>>, cur: &[u32]) -> Result<()> {
    if out.len() >= DIM_CAP {
        return Err(Error::Resource(format!(
            "basis dimension exceeds the cap of {DIM_CAP}"
        )));
    }
    out.push(cur.to_vec());
    Ok(())
}

/// Dense real matrix acting on a SectorBasis, row-major.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub basis: Rc<SectorBasis>,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn zeros(basis: &Rc<SectorBasis>) -> Self {
        let n = basis.dim();
        DenseOperator {
            basis: Rc::clone(basis),
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(basis: &Rc<SectorBasis>) -> Self {
        let mut m = Self::zeros(basis);
        for i in 0..basis.dim() {
            m.data[i * basis.dim() + i] = 1.0;
        }
        m
    }

    /// Diagonal operator from a function of the occupation tuple.
    pub fn diagonal(basis: &Rc<SectorBasis>, f: impl Fn(&[u32]) -> f64) -> Self {
        let mut m = Self::zeros(basis);
        for (i, s) in basis.states.iter().enumerate() {
            m.data[i * basis.dim() + i] = f(s);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let n = self.dim();
        self.data[r * n + c] = v;
    }

    pub fn mul(&self, rhs: &DenseOperator) -> DenseOperator {
        let n = self.dim();
        assert_eq!(n, rhs.dim(), "operator dimensions must agree");
        let mut out = DenseOperator::zeros(&self.basis);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    /// Transpose; the adjoint, since all entries are real.
    pub fn dagger(&self) -> DenseOperator {
        let n = self.dim();
        let mut out = DenseOperator::zeros(&self.basis);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j];
            }
        }
        out
    }

    pub fn add(&self, rhs: &DenseOperator) -> DenseOperator {
        self.zip(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &DenseOperator) -> DenseOperator {
        self.zip(rhs, |a, b| a - b)
    }

    fn zip(&self, rhs: &DenseOperator, f: impl Fn(f64, f64) -> f64) -> DenseOperator {
        assert_eq!(self.dim(), rhs.dim());
        let mut out = self.clone();
        for (a, &b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a = f(*a, b);
        }
        out
    }

    pub fn scale(&self, c: f64) -> DenseOperator {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= c;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0;
        for &a in &self.data {
            m = math::fmax(m, math::fabs(a));
        }
        m
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.data[i * n + j] != 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Max scale-free residual against `rhs` over entries whose bra and ket
    /// occupation totals are both at most `max_total`.
    pub fn interior_residual(&self, rhs: &DenseOperator, max_total: u32) -> f64 {
        let n = self.dim();
        let mut worst = 0.0;
        for i in 0..n {
            if self.basis.states[i].iter().sum::<u32>() > max_total {
                continue;
            }
            for j in 0..n {
                if self.basis.states[j].iter().sum::<u32>() > max_total {
                    continue;
                }
                worst = math::fmax(
                    worst,
                    crate::rel_residual(self.data[i * n + j], rhs.data[i * n + j]),
                );
            }
        }
        worst
    }

    /// Max scale-free deviation from the identity.
    pub fn residual_from_identity(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = math::fmax(worst, math::fabs(self.data[i * n + j] - want));
            }
        }
        worst
    }
}

/// Generator selector for `generator_matrix`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gen {
    Raise,
    Lower,
    Number,
}

/// Matrix of a single q-oscillator generator on mode `osc`. Raising entries
/// that would leave a capped space (or any fixed-sum sector) are dropped:
/// the truncation corrupts only the maximal-total boundary.
pub fn generator_matrix(which: Gen, osc: usize, basis: &Rc<SectorBasis>, q: f64) -> DenseOperator {
    let mut m = DenseOperator::zeros(basis);
    for (col, s) in basis.states.iter().enumerate() {
        match which {
            Gen::Number => m.set(col, col, s[osc] as f64),
            Gen::Lower => {
                if s[osc] >= 1 {
                    let mut t = s.clone();
                    t[osc] -= 1;
                    if let Some(row) = basis.position(&t) {
                        let amp = math::sqrt((1.0 - math::powi(q, s[osc] as i64)) / (1.0 - q));
                        m.set(row, col, amp);
                    }
                }
            }
            Gen::Raise => {
                let mut t = s.clone();
                t[osc] += 1;
                if let Some(row) = basis.position(&t) {
                    let amp = math::sqrt((1.0 - math::powi(q, s[osc] as i64 + 1)) / (1.0 - q));
                    m.set(row, col, amp);
                }
            }
        }
    }
    m
}

/// Exact within-space bilinear `X+^(up) X-^(down)` (one quantum moved from
/// `down` to `up`); preserves the total occupation, so no truncation loss.
pub fn bilinear(basis: &Rc<SectorBasis>, up: usize, down: usize, q: f64) -> DenseOperator {
    let mut m = DenseOperator::zeros(basis);
    for (col, s) in basis.states.iter().enumerate() {
        if s[down] == 0 {
            continue;
        }
        let mut t = s.clone();
        t[down] -= 1;
        t[up] += 1;
        let row = basis.position(&t).expect("bilinear target stays in basis");
        let amp = math::sqrt(
            (1.0 - math::powi(q, s[up] as i64 + 1)) * (1.0 - math::powi(q, s[down] as i64)),
        ) / (1.0 - q);
        m.set(row, col, amp);
    }
    m
}

/// Dressed shift `theta (1-q) q^{-(X0_i+X0_j)/2} X+^(i) X-^(j)`, assembled as
/// one exact operator (the dressing is a function of the invariant i+j total).
pub fn dressed_shift(
    basis: &Rc<SectorBasis>,
    i: usize,
    j: usize,
    theta: f64,
    q: f64,
) -> DenseOperator {
    let mut m = DenseOperator::zeros(basis);
    for (col, s) in basis.states.iter().enumerate() {
        if s[j] == 0 {
            continue;
        }
        let mut t = s.clone();
        t[j] -= 1;
        t[i] += 1;
        let row = basis.position(&t).expect("shift target stays in basis");
        let amp = theta
            * math::sqrt(
                (1.0 - math::powi(q, s[i] as i64 + 1)) * (1.0 - math::powi(q, s[j] as i64)),
            )
            * math::pow_half(q, -((s[i] + s[j]) as i64));
        m.set(row, col, amp);
    }
    m
}

/// Which q-exponential series to apply in `operator_qexp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QExpKind {
    Little,
    Big,
}

/// Operator q-exponential: entrywise scalar q-exponential for diagonal
/// arguments, exactly terminating power series for nilpotent ones.
pub fn operator_qexp(kind: QExpKind, m: &DenseOperator, q: f64) -> Result<DenseOperator> {
    if m.is_diagonal() {
        let n = m.dim();
        let mut out = DenseOperator::zeros(&m.basis);
        for i in 0..n {
            let z = m.get(i, i);
            let v = match kind {
                QExpKind::Little => qcalc::q_exp_little(z, q)?,
                QExpKind::Big => qcalc::q_exp_big(z, q),
            };
            out.set(i, i, v);
        }
        return Ok(out);
    }
    let mut acc = DenseOperator::identity(&m.basis);
    let mut term = DenseOperator::identity(&m.basis);
    let dim = m.dim();
    let mut qn = q; // q^n
    for n in 1..=dim {
        term = term.mul(m).scale(1.0 / (1.0 - qn));
        if kind == QExpKind::Big {
            term = term.scale(math::powi(q, n as i64 - 1));
        }
        if term.max_abs() == 0.0 {
            return Ok(acc);
        }
        acc = acc.add(&term);
        qn *= q;
    }
    if term.max_abs() == 0.0 {
        Ok(acc)
    } else {
        Err(Error::Domain(
            "operator q-exponential argument is neither diagonal nor nilpotent".into(),
        ))
    }
}

/// The four-factor q-rotation `U(theta)` mixing modes i and j:
/// `e_q^{1/2}(theta^2 q^{-X0_i}) e_q(shift_+) E_q(-shift_-) E_q^{1/2}(-theta^2 q^{-X0_j})`.
pub fn build_u(
    basis: &Rc<SectorBasis>,
    i: usize,
    j: usize,
    theta: f64,
    q: f64,
) -> Result<DenseOperator> {
    let eps = Tolerance::default().series_eps;
    let t2 = theta * theta;
    let n = basis.dim();
    let mut d_left = DenseOperator::zeros(basis);
    let mut d_right = DenseOperator::zeros(basis);
    for r in 0..n {
        let s = &basis.states[r];
        let zl = t2 * math::powi(q, -(s[i] as i64));
        let pl = qcalc::q_pochhammer_inf(zl, q, eps);
        if pl <= 0.0 {
            return Err(Error::Domain(format!(
                "rotation requires theta^2 < q^n for every occupation n (failed at n={})",
                s[i]
            )));
        }
        d_left.set(r, r, math::sqrt(1.0 / pl));
        let pr = qcalc::q_pochhammer_inf(t2 * math::powi(q, -(s[j] as i64)), q, eps);
        if pr <= 0.0 {
            return Err(Error::Domain(format!(
                "rotation requires theta^2 < q^n for every occupation n (failed at n={})",
                s[j]
            )));
        }
        d_right.set(r, r, math::sqrt(pr));
    }
    let up = dressed_shift(basis, i, j, theta, q);
    let down = dressed_shift(basis, j, i, theta, q).scale(-1.0);
    let e_up = operator_qexp(QExpKind::Little, &up, q)?;
    let e_down = operator_qexp(QExpKind::Big, &down, q)?;
    Ok(d_left.mul(&e_up).mul(&e_down).mul(&d_right))
}

/// Ordered product `U_{d,d+1}(theta_d) ... U_{1,2}(theta_1)` whose matrix
/// elements are the multivariate polynomials (modes are 0-based here).
pub fn ordered_u_product(basis: &Rc<SectorBasis>, thetas: &[f64], q: f64) -> Result<DenseOperator> {
    let d = thetas.len();
    if basis.modes != d + 1 {
        return Err(Error::Domain(format!(
            "{} angles need {} modes, basis has {}",
            d,
            d + 1,
            basis.modes
        )));
    }
    let mut u = DenseOperator::identity(basis);
    for k in (1..=d).rev() {
        u = u.mul(&build_u(basis, k - 1, k, thetas[k - 1], q)?);
    }
    Ok(u)
}

/// Entry of `u` between two occupation tuples.
pub fn matrix_element(u: &DenseOperator, bra: &[u32], ket: &[u32]) -> Result<f64> {
    let r = u
        .basis
        .position(bra)
        .ok_or_else(|| Error::Index(format!("bra state {bra:?} not in basis")))?;
    let c = u
        .basis
        .position(ket)
        .ok_or_else(|| Error::Index(format!("ket state {ket:?} not in basis")))?;
    Ok(u.get(r, c))
}

/// Named operator conjugation identities checked as matrix equalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConjugationId {
    /// q-BCH expansion of `E_q(l X) Y e_q(-l q^a X)`.
    Bch1,
    /// q-BCH expansion of `e_q(l X) Y E_q(-l q^a X)`.
    Bch2,
    /// Little-q-exponential braid identity behind unitarity.
    BraidLittle,
    /// Big-q-exponential braid identity behind unitarity.
    BraidBig,
    /// `U+(q^{-1/2}t) A- U(t)` closed form.
    Rel1,
    /// Adjoint of Rel1: `U+(t) A+ U(q^{-1/2}t)`.
    ApTilde,
    /// Three-mode expansion of the dressed B- conjugation.
    Rr5,
    /// `U(t) q^{-A0/2} A- U+(t)` closed form.
    Conju3,
    /// Three-mode expansion of the dressed A- conjugation.
    Rr11,
    /// `U(t) B- U+(q^{1/2}t)` closed form.
    BHatMinus,
    /// `U+(t) q^{A0} U(t)` closed form (3-point eigenvalue parent).
    ConjuA0,
    /// `U+(t) q^{-B0} U(t)` closed form.
    QB0Conj,
    /// Three-mode `q^{A0+B0}` conjugation (7-point eigenvalue parent).
    QA0B0Conj,
}

impl ConjugationId {
    pub const ALL: [ConjugationId; 13] = [
        ConjugationId::Bch1,
        ConjugationId::Bch2,
        ConjugationId::BraidLittle,
        ConjugationId::BraidBig,
        ConjugationId::Rel1,
        ConjugationId::ApTilde,
        ConjugationId::Rr5,
        ConjugationId::Conju3,
        ConjugationId::Rr11,
        ConjugationId::BHatMinus,
        ConjugationId::ConjuA0,
        ConjugationId::QB0Conj,
        ConjugationId::QA0B0Conj,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConjugationId::Bch1 => "BCH_1",
            ConjugationId::Bch2 => "BCH_2",
            ConjugationId::BraidLittle => "BRAID_LITTLE",
            ConjugationId::BraidBig => "BRAID_BIG",
            ConjugationId::Rel1 => "CONJ_A_MINUS",
            ConjugationId::ApTilde => "CONJ_A_PLUS",
            ConjugationId::Rr5 => "CONJ_B_MINUS_DRESSED",
            ConjugationId::Conju3 => "CONJ_A_MINUS_DRESSED",
            ConjugationId::Rr11 => "CONJ_A_MINUS_TWO_STEP",
            ConjugationId::BHatMinus => "CONJ_B_MINUS",
            ConjugationId::ConjuA0 => "CONJ_QA0",
            ConjugationId::QB0Conj => "CONJ_QB0_INV",
            ConjugationId::QA0B0Conj => "CONJ_QA0B0",
        }
    }
}

/// Builds both sides of the named identity on a capped space of size N+2 and
/// returns the max scale-free residual over the interior (totals <= N).
pub fn conjugation_residual(
    id: ConjugationId,
    big_n: u32,
    q: f64,
    theta: f64,
    phi: f64,
) -> Result<f64> {
    let cap = big_n + 2;
    let three_modes = matches!(
        id,
        ConjugationId::Rr5 | ConjugationId::Rr11 | ConjugationId::QA0B0Conj
    );
    let basis = SectorBasis::capped(if three_modes { 3 } else { 2 }, cap)?;
    let b = &basis;
    let sq = math::sqrt;
    let qh = |e: i64| math::pow_half(q, e);
    let diag = |f: &dyn Fn(&[u32]) -> f64| DenseOperator::diagonal(b, f);
    let lower = |i: usize| generator_matrix(Gen::Lower, i, b, q);
    let raise = |i: usize| generator_matrix(Gen::Raise, i, b, q);
    // validate every sqrt(1 - angle^2 q^{-n}) radicand up front
    for &(a, what) in &[(theta, "theta"), (phi, "phi")] {
        if a * a >= math::powi(q, cap as i64 + 1) {
            return Err(Error::Domain(format!(
                "{what}^2 must stay below q^{} for the conjugation catalog",
                cap + 1
            )));
        }
    }
    let (l, r) = match id {
        ConjugationId::Bch1 | ConjugationId::Bch2 => {
            let x = dressed_shift(b, 0, 1, 1.0, q);
            let y = diag(&|s| math::powi(q, s[0] as i64));
            let (lam, alpha) = (0.3, 1i64);
            let qa = math::powi(q, alpha);
            let lhs = if id == ConjugationId::Bch1 {
                operator_qexp(QExpKind::Big, &x.scale(lam), q)?
                    .mul(&y)
                    .mul(&operator_qexp(QExpKind::Little, &x.scale(-lam * qa), q)?)
            } else {
                operator_qexp(QExpKind::Little, &x.scale(lam), q)?
                    .mul(&y)
                    .mul(&operator_qexp(QExpKind::Big, &x.scale(-lam * qa), q)?)
            };
            // iterated q-commutators [X,Y]_n starting from [X,Y]_0 = Y
            let mut rhs = y.clone();
            let mut c = y.clone();
            let mut lam_pow = 1.0;
            let mut poch = 1.0;
            for n in 0..=(2 * b.dim()) {
                c = if id == ConjugationId::Bch1 {
                    x.scale(math::powi(q, n as i64))
                        .mul(&c)
                        .sub(&c.mul(&x.scale(qa)))
                } else {
                    x.mul(&c)
                        .sub(&c.mul(&x.scale(math::powi(q, n as i64 + alpha))))
                };
                lam_pow *= lam;
                poch *= 1.0 - math::powi(q, n as i64 + 1);
                if c.max_abs() == 0.0 {
                    break;
                }
                rhs = rhs.add(&c.scale(lam_pow / poch));
            }
            (lhs, rhs)
        }
        ConjugationId::BraidLittle => {
            let am_bp = bilinear(b, 1, 0, q);
            let ap_bm = bilinear(b, 0, 1, q);
            let (al, be) = (0.2, 0.15);
            let c = al * be / ((1.0 - q) * (1.0 - q));
            let mid_b = operator_qexp(
                QExpKind::Little,
                &diag(&|s| c * math::powi(q, s[1] as i64)),
                q,
            )?;
            let mid_a = operator_qexp(
                QExpKind::Little,
                &diag(&|s| c * math::powi(q, s[0] as i64)),
                q,
            )?;
            let lhs = operator_qexp(QExpKind::Little, &am_bp.scale(al), q)?
                .mul(&mid_b)
                .mul(&operator_qexp(QExpKind::Little, &ap_bm.scale(be), q)?);
            let rhs = operator_qexp(QExpKind::Little, &ap_bm.scale(be), q)?
                .mul(&mid_a)
                .mul(&operator_qexp(QExpKind::Little, &am_bp.scale(al), q)?);
            (lhs, rhs)
        }
        ConjugationId::BraidBig => {
            let am_bp = bilinear(b, 1, 0, q);
            let ap_bm = bilinear(b, 0, 1, q);
            let (ga, de) = (0.2, 0.15);
            let c = ga * de / ((1.0 - q) * (1.0 - q));
            let mid_b = operator_qexp(
                QExpKind::Big,
                &diag(&|s| -c * math::powi(q, s[1] as i64)),
                q,
            )?;
            let mid_a = operator_qexp(
                QExpKind::Big,
                &diag(&|s| -c * math::powi(q, s[0] as i64)),
                q,
            )?;
            let lhs = operator_qexp(QExpKind::Big, &ap_bm.scale(ga), q)?
                .mul(&mid_b)
                .mul(&operator_qexp(QExpKind::Big, &am_bp.scale(de), q)?);
            let rhs = operator_qexp(QExpKind::Big, &am_bp.scale(de), q)?
                .mul(&mid_a)
                .mul(&operator_qexp(QExpKind::Big, &ap_bm.scale(ga), q)?);
            (lhs, rhs)
        }
        ConjugationId::Rel1 => {
            let u = build_u(b, 0, 1, theta, q)?;
            let uh = build_u(b, 0, 1, theta / sq(q), q)?;
            let lhs = uh.dagger().mul(&lower(0)).mul(&u);
            let t1 = diag(&|s| sq(1.0 - theta * theta / q * math::powi(q, -(s[1] as i64))))
                .mul(&lower(0));
            let t2 = diag(&|s| qh(s[0] as i64 - s[1] as i64))
                .mul(&lower(1))
                .scale(theta / sq(q));
            (lhs, t1.add(&t2))
        }
        ConjugationId::ApTilde => {
            let u = build_u(b, 0, 1, theta, q)?;
            let uh = build_u(b, 0, 1, theta / sq(q), q)?;
            let lhs = u.dagger().mul(&raise(0)).mul(&uh);
            let t1 = raise(0)
                .mul(&diag(&|s| sq(1.0 - theta * theta / q * math::powi(q, -(s[1] as i64)))));
            let t2 = raise(1)
                .mul(&diag(&|s| qh(s[0] as i64 - s[1] as i64)))
                .scale(theta / sq(q));
            (lhs, t1.add(&t2))
        }
        ConjugationId::Rr5 => {
            let ut = build_u(b, 0, 1, theta, q)?;
            let up = build_u(b, 1, 2, phi, q)?;
            let uph = build_u(b, 1, 2, phi / sq(q), q)?;
            let lhs = ut
                .dagger()
                .mul(&uph.dagger())
                .mul(&diag(&|s| qh(s[0] as i64)))
                .mul(&lower(1))
                .mul(&up)
                .mul(&ut);
            let bb = diag(&|s| qh(-(s[1] as i64)))
                .mul(&lower(1))
                .mul(&diag(&|s| sq(1.0 - theta * theta * math::powi(q, -(s[1] as i64)))));
            let aa = diag(&|s| math::powi(q, -(s[1] as i64)))
                .mul(&lower(0))
                .mul(&diag(&|s| qh(-(s[0] as i64))))
                .scale(theta);
            let inner = bb.sub(&aa);
            let cc = diag(&|s| qh(-(s[2] as i64))).mul(&lower(2)).scale(phi / sq(q));
            let rhs = diag(&|s| qh(s[0] as i64 + s[1] as i64)).mul(
                &diag(&|s| sq(1.0 - phi * phi / q * math::powi(q, -(s[2] as i64))))
                    .mul(&inner)
                    .add(&cc),
            );
            (lhs, rhs)
        }
        ConjugationId::Conju3 => {
            let u = build_u(b, 0, 1, theta, q)?;
            let lhs = u
                .mul(&diag(&|s| qh(-(s[0] as i64))))
                .mul(&lower(0))
                .mul(&u.dagger());
            let t1 = diag(&|s| qh(-(s[0] as i64)))
                .mul(&lower(0))
                .mul(&diag(&|s| sq(1.0 - theta * theta * math::powi(q, -(s[0] as i64)))));
            let t2 = diag(&|s| math::powi(q, -(s[0] as i64)))
                .mul(&lower(1))
                .mul(&diag(&|s| qh(-(s[1] as i64))))
                .scale(theta);
            (lhs, t1.sub(&t2))
        }
        ConjugationId::Rr11 => {
            let ut = build_u(b, 0, 1, theta, q)?;
            let up = build_u(b, 1, 2, phi, q)?;
            let lhs = up
                .mul(&ut)
                .mul(&diag(&|s| qh(-(s[0] as i64))))
                .mul(&lower(0))
                .mul(&ut.dagger())
                .mul(&up.dagger());
            let t1 = diag(&|s| qh(-(s[0] as i64)))
                .mul(&lower(0))
                .mul(&diag(&|s| sq(1.0 - theta * theta * math::powi(q, -(s[0] as i64)))));
            let b1 = diag(&|s| qh(-(s[1] as i64)))
                .mul(&lower(1))
                .mul(&diag(&|s| sq(1.0 - phi * phi * math::powi(q, -(s[1] as i64)))));
            let b2 = diag(&|s| math::powi(q, -(s[1] as i64)))
                .mul(&diag(&|s| qh(-(s[2] as i64))))
                .mul(&lower(2))
                .scale(phi / sq(q));
            let t2 = diag(&|s| math::powi(q, -(s[0] as i64)))
                .mul(&b1.sub(&b2))
                .scale(theta / sq(q));
            (lhs, t1.sub(&t2))
        }
        ConjugationId::BHatMinus => {
            let u = build_u(b, 0, 1, theta, q)?;
            let uh = build_u(b, 0, 1, theta * sq(q), q)?;
            let lhs = u.mul(&lower(1)).mul(&uh.dagger());
            let t1 = diag(&|s| sq(1.0 - theta * theta * math::powi(q, -(s[0] as i64))))
                .mul(&lower(1));
            let t2 = diag(&|s| qh(s[1] as i64 - s[0] as i64))
                .mul(&lower(0))
                .scale(theta);
            (lhs, t1.add(&t2))
        }
        ConjugationId::ConjuA0 => {
            let u = build_u(b, 0, 1, theta, q)?;
            let lhs = u
                .dagger()
                .mul(&diag(&|s| math::powi(q, s[0] as i64)))
                .mul(&u);
            let t2 = theta * theta;
            let d0 = diag(&|s| {
                let (a, bb) = (s[0] as i64, s[1] as i64);
                math::powi(q, a)
                    * (1.0 - (1.0 + 1.0 / q) * t2 * math::powi(q, -bb)
                        + t2
                        + t2 / q * math::powi(q, -(a + bb)))
            });
            let am_bp = bilinear(b, 1, 0, q);
            let ap_bm = bilinear(b, 0, 1, q);
            let dress = diag(&|s| {
                qh(s[0] as i64 - s[1] as i64) * sq(1.0 - t2 * math::powi(q, -(s[1] as i64)))
            });
            let rhs = d0
                .sub(&dress.mul(&am_bp).scale(theta * (1.0 - q)))
                .sub(&ap_bm.mul(&dress).scale(theta * (1.0 - q)));
            (lhs, rhs)
        }
        ConjugationId::QB0Conj => {
            let u = build_u(b, 0, 1, theta, q)?;
            let lhs = u
                .dagger()
                .mul(&diag(&|s| math::powi(q, -(s[1] as i64))))
                .mul(&u);
            let t2 = theta * theta;
            let d0 = diag(&|s| {
                let (a, bb) = (s[0] as i64, s[1] as i64);
                1.0 - (1.0 + 1.0 / q) * t2 * math::powi(q, -bb)
                    + t2
                    + t2 / q * math::powi(q, -(a + bb))
            });
            let am_bp = bilinear(b, 1, 0, q);
            let ap_bm = bilinear(b, 0, 1, q);
            let dress = diag(&|s| {
                qh(-(s[0] as i64 + s[1] as i64)) * sq(1.0 - t2 * math::powi(q, -(s[1] as i64)))
            });
            let inner = d0
                .sub(&dress.mul(&am_bp).scale(theta * (1.0 - q)))
                .sub(&ap_bm.mul(&dress).scale(theta * (1.0 - q) / q));
            let rhs = diag(&|s| math::powi(q, -(s[1] as i64))).mul(&inner);
            (lhs, rhs)
        }
        ConjugationId::QA0B0Conj => {
            let ut = build_u(b, 0, 1, theta, q)?;
            let up = build_u(b, 1, 2, phi, q)?;
            let lhs = ut
                .dagger()
                .mul(&up.dagger())
                .mul(&diag(&|s| math::powi(q, (s[0] + s[1]) as i64)))
                .mul(&up)
                .mul(&ut);
            let t2 = theta * theta;
            let f2 = phi * phi;
            let term1 = diag(&|s| {
                math::powi(q, (s[0] + s[1]) as i64)
                    * (1.0 - (1.0 + 1.0 / q) * f2 * math::powi(q, -(s[2] as i64)) + f2)
            });
            let term2 = diag(&|s| {
                let (a, bb, c) = (s[0] as i64, s[1] as i64, s[2] as i64);
                f2 / q
                    * math::powi(q, a - c)
                    * (1.0 - (1.0 + 1.0 / q) * t2 * math::powi(q, -bb)
                        + t2
                        + t2 / q * math::powi(q, -(a + bb)))
            });
            let am_bp = bilinear(b, 1, 0, q);
            let ap_bm = bilinear(b, 0, 1, q);
            let sqb = |s: &[u32]| sq(1.0 - t2 * math::powi(q, -(s[1] as i64)));
            let sqc = |s: &[u32]| sq(1.0 - f2 * math::powi(q, -(s[2] as i64)));
            let dress_ab =
                diag(&|s| qh(s[0] as i64 - s[1] as i64 - 2 * s[2] as i64) * sqb(s));
            let term3 = dress_ab.mul(&am_bp).scale(f2 * theta * (1.0 - q) / q);
            let term4 = ap_bm.mul(&dress_ab).scale(f2 * theta * (1.0 - q) / q);
            let term5 = diag(&|s| qh(2 * s[0] as i64 + s[1] as i64))
                .mul(&lower(1))
                .mul(&diag(&|s| sqb(s) * qh(-(s[2] as i64)) * sqc(s)))
                .mul(&raise(2))
                .scale(phi * (1.0 - q));
            let term6 = diag(&|s| sqb(s))
                .mul(&raise(1))
                .mul(&diag(&|s| qh(2 * s[0] as i64 + s[1] as i64)))
                .mul(&lower(2))
                .mul(&diag(&|s| sqc(s) * qh(-(s[2] as i64))))
                .scale(phi * (1.0 - q));
            let term7 = lower(0)
                .mul(&diag(&|s| qh(s[0] as i64) * qh(-(s[2] as i64)) * sqc(s)))
                .mul(&raise(2))
                .scale(theta * phi * (1.0 - q) / q);
            let term8 = diag(&|s| qh(s[0] as i64))
                .mul(&raise(0))
                .mul(&lower(2))
                .mul(&diag(&|s| sqc(s) * qh(-(s[2] as i64))))
                .scale(theta * phi * (1.0 - q) / q);
            let rhs = term1
                .add(&term2)
                .sub(&term3)
                .sub(&term4)
                .sub(&term5)
                .sub(&term6)
                .add(&term7)
                .add(&term8);
            (lhs, rhs)
        }
    };
    Ok(l.interior_residual(&r, big_n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polys;

    const Q: f64 = 0.7;
    const TH: f64 = 0.15;
    const PH: f64 = 0.2;

    #[test]
    fn basis_counts() {
        let b = SectorBasis::fixed(2, 1).unwrap();
        assert_eq!(b.dim(), 3);
        assert_eq!(b.states[0], alloc::vec![0, 2]);
        assert_eq!(b.states[2], alloc::vec![2, 0]);
        assert_eq!(SectorBasis::fixed(3, 2).unwrap().dim(), 10);
        // multichoose(4,3) = 20
        assert_eq!(SectorBasis::fixed(3, 3).unwrap().dim(), 20);
        assert_eq!(SectorBasis::capped(2, 3).unwrap().dim(), 10);
    }

    #[test]
    fn oscillator_algebra_relations() {
        let b = SectorBasis::capped(2, 6).unwrap();
        for osc in 0..2 {
            let lo = generator_matrix(Gen::Lower, osc, &b, Q);
            let hi = generator_matrix(Gen::Raise, osc, &b, Q);
            // [X-, X+] = q^{X0} away from the truncation boundary
            let comm = lo.mul(&hi).sub(&hi.mul(&lo));
            let qn = DenseOperator::diagonal(&b, |s| crate::math::powi(Q, s[osc] as i64));
            assert!(comm.interior_residual(&qn, 5) < 1e-12);
            // X- X+ - q X+ X- = 1 on the interior
            let one = DenseOperator::identity(&b);
            let rel = lo.mul(&hi).sub(&hi.mul(&lo).scale(Q));
            assert!(rel.interior_residual(&one, 5) < 1e-12);
        }
    }

    #[test]
    fn qexp_basics() {
        let b = SectorBasis::fixed(4, 1).unwrap();
        let zero = DenseOperator::zeros(&b);
        let e = operator_qexp(QExpKind::Little, &zero, Q).unwrap();
        assert!(e.residual_from_identity() < 1e-15);
        // e_q(M) E_q(-M) = 1 for the nilpotent shift
        let m = dressed_shift(&b, 0, 1, TH, Q);
        let l = operator_qexp(QExpKind::Little, &m, Q).unwrap();
        let r = operator_qexp(QExpKind::Big, &m.scale(-1.0), Q).unwrap();
        assert!(l.mul(&r).residual_from_identity() < 1e-12);
        // diagonal case matches the scalar kernel entrywise
        let d = DenseOperator::diagonal(&b, |s| 0.1 * s[0] as f64);
        let ed = operator_qexp(QExpKind::Little, &d, Q).unwrap();
        for i in 0..b.dim() {
            let want = qcalc::q_exp_little(d.get(i, i), Q).unwrap();
            assert!((ed.get(i, i) - want).abs() < 1e-14);
        }
        // non-diagonal, non-nilpotent input is rejected
        let bad = m.add(&m.dagger());
        assert!(operator_qexp(QExpKind::Little, &bad, Q).is_err());
    }

    #[test]
    fn shift_nilpotency() {
        let b = SectorBasis::fixed(4, 1).unwrap();
        let m = dressed_shift(&b, 0, 1, TH, Q);
        let mut p = m.clone();
        for _ in 0..4 {
            p = p.mul(&m);
        }
        assert_eq!(p.max_abs(), 0.0);
    }

    #[test]
    fn rotation_identity_and_unitarity() {
        let b = SectorBasis::fixed(5, 1).unwrap();
        let u0 = build_u(&b, 0, 1, 0.0, Q).unwrap();
        assert!(u0.residual_from_identity() < 1e-15);
        let u = build_u(&b, 0, 1, TH, Q).unwrap();
        assert!(u.dagger().mul(&u).residual_from_identity() < 1e-10);
        assert!(u.mul(&u.dagger()).residual_from_identity() < 1e-10);
    }

    #[test]
    fn univariate_matrix_elements() {
        let n = 5u32;
        let b = SectorBasis::fixed(n, 1).unwrap();
        let u = build_u(&b, 0, 1, TH, Q).unwrap();
        for a in 0..=n {
            for x in 0..=n {
                let m = matrix_element(&u, &[a, n - a], &[x, n - x]).unwrap();
                let xi = polys::xi_uni(a as i64, x as i64, n as i64, TH, Q).unwrap();
                assert!(
                    crate::rel_residual(m, xi) < 1e-10,
                    "({a},{x}): {m} vs {xi}"
                );
            }
        }
    }

    #[test]
    fn bivariate_matrix_elements_and_blocks() {
        let n = 4u32;
        let b = SectorBasis::fixed(n, 2).unwrap();
        let u_ab = build_u(&b, 0, 1, TH, Q).unwrap();
        let u_bc = build_u(&b, 1, 2, PH, Q).unwrap();
        let u = u_bc.mul(&u_ab);
        let p = polys::QParamsBi::new(Q, TH, PH, n).unwrap();
        for s in &b.states {
            for t in &b.states {
                // U_BC leaves the first index invariant
                if s[0] != t[0] {
                    assert_eq!(matrix_element(&u_bc, s, t).unwrap(), 0.0);
                }
                // U_AB leaves x1 + x2 invariant
                if s[0] + s[1] != t[0] + t[1] {
                    assert_eq!(matrix_element(&u_ab, s, t).unwrap(), 0.0);
                }
                let m = matrix_element(&u, s, t).unwrap();
                let xi = polys::xi_bi(s[0] as i64, s[1] as i64, t[0] as i64, t[1] as i64, &p)
                    .unwrap();
                assert!(crate::rel_residual(m, xi) < 1e-10, "{s:?} {t:?}: {m} vs {xi}");
            }
        }
        assert!(u.dagger().mul(&u).residual_from_identity() < 1e-10);
    }

    #[test]
    fn multivariate_matrix_elements() {
        let n = 3u32;
        let thetas = [0.15, 0.2, 0.25];
        let b = SectorBasis::fixed(n, 3).unwrap();
        let u = ordered_u_product(&b, &thetas, Q).unwrap();
        assert!(u.dagger().mul(&u).residual_from_identity() < 1e-10);
        for s in &b.states {
            for t in &b.states {
                let m = matrix_element(&u, s, t).unwrap();
                let ni = polys::MultiIndex::new(s[..3].to_vec(), n).unwrap();
                let xi = polys::MultiIndex::new(t[..3].to_vec(), n).unwrap();
                let v = polys::xi_multi(&ni, &xi, &thetas, Q).unwrap();
                assert!(crate::rel_residual(m, v) < 1e-9, "{s:?} {t:?}: {m} vs {v}");
            }
        }
    }

    #[test]
    fn conjugation_catalog() {
        for id in ConjugationId::ALL {
            let res = conjugation_residual(id, 5, Q, TH, PH).unwrap();
            assert!(res <= 1e-10, "{}: residual {res}", id.name());
        }
    }

    #[test]
    fn matrix_element_index_error() {
        let b = SectorBasis::fixed(3, 1).unwrap();
        let u = DenseOperator::identity(&b);
        assert!(matches!(
            matrix_element(&u, &[5, 5], &[0, 3]),
            Err(Error::Index(_))
        ));
        assert_eq!(matrix_element(&u, &[1, 2], &[1, 2]).unwrap(), 1.0);
    }
}
