//! Canonical form: a rational normal form over exact coefficients.
//!
//! Every expression normalizes to a fraction `num / den` where `num` is a
//! polynomial (monomials over atoms with exponents) and `den` is a product of
//! atoms with positive integer powers. Two expressions that are equal as
//! rational-exponential functions of the coordinates rebuild to structurally
//! identical trees, and zero is represented uniquely as the empty numerator,
//! so `is_zero` needs no polynomial GCD: fraction addition always goes
//! through a common denominator.
//!
//! Frozen normalization rules (the order below is also the printing order):
//! - Atoms rank: constants < independent variables < jet coordinates <
//!   function applications < exponentials < sums; monomials compare by total
//!   rational degree first, then lexicographically; the leading monomial of a
//!   polynomial is the largest in this order.
//! - Like terms merge; rational constants fold; numeric coefficients live
//!   only in the polynomial coefficients, never in atoms.
//! - `exp` is folded per monomial: `exp(a)*exp(b) -> exp(a+b)`,
//!   `exp(a)^q -> exp(q*a)`, `exp(0) -> 1`; `exp` never appears in a
//!   denominator (negative powers negate the argument).
//! - Positive integer powers of sums expand; negative integer powers become
//!   denominator atoms, scaled so the leading coefficient is one (the scale
//!   factor folds into the coefficients).
//! - Non-integer exponents stay on the atom. A concrete negative non-integer
//!   exponent splits into its fractional part (kept on the atom) and an
//!   integer denominator power. Sum atoms under non-integer exponents are
//!   kept unscaled (rational scale factors would need irrational roots),
//!   except for orientation: when flipping the base's numerator and/or
//!   denominator polys to the constant-positive orientation cancels the sign
//!   exactly, the flipped forms are used.
//! - Inverting a multi-term numerator first splits off its integer monomial
//!   content, so `1/(t*S)` keeps `t` and `S` as separate denominator atoms.
//! - Cancellation against the denominator: if every numerator monomial
//!   carries an integer power of a denominator atom (directly, or as a
//!   rational multiple of a scaled sum atom), the common power cancels; a
//!   denominator sum-atom that exactly divides the expanded numerator
//!   divides out (trial division only - no polynomial factorization).

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::number::GaussRat;
use crate::space::JetCoord;
use crate::{Error, Result};

use super::{Expr, Node, QExp};

// ---------------------------------------------------------------------------
// Normal-form data model
// ---------------------------------------------------------------------------

/// Multiplicative atom of a monomial. Variant order is the frozen atom rank.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub(crate) enum Atom {
    Const { id: usize, conj: bool },
    Indep(usize),
    Jet(JetCoord),
    Func { id: usize, orders: Vec<u32>, args: Vec<Expr>, conj: bool },
    /// Exponential with canonical argument; always exponent one, never in a
    /// denominator.
    Exp(Expr),
    /// A multi-term polynomial under a non-distributable power.
    Sum(Poly),
}

/// Monomial: atoms with nonzero exponents. Invariants: no exponent is zero;
/// a pure-rational exponent is positive, and positive integers are allowed
/// only on non-`Sum` atoms (integer powers of sums expand); at most one `Exp`
/// atom, with exponent one.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default)]
pub(crate) struct Mono(pub(crate) BTreeMap<Atom, QExp>);

/// Polynomial: monomials with nonzero coefficients.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub(crate) struct Poly(pub(crate) BTreeMap<Mono, GaussRat>);

/// Denominator: atoms with positive integer powers.
pub(crate) type Den = BTreeMap<Atom, u32>;

/// A normalized fraction.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub(crate) struct Nf {
    pub(crate) num: Poly,
    pub(crate) den: Den,
}

impl Mono {
    pub(crate) fn unit() -> Mono {
        Mono(BTreeMap::new())
    }

    pub(crate) fn atom(a: Atom) -> Mono {
        let mut m = BTreeMap::new();
        m.insert(a, QExp::one());
        Mono(m)
    }

    /// Total degree: the sum of the rational parts of the exponents.
    fn degree(&self) -> BigRational {
        let mut d = BigRational::zero();
        for q in self.0.values() {
            d += &q.rat;
        }
        d
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl Poly {
    pub(crate) fn zero() -> Poly {
        Poly(BTreeMap::new())
    }

    pub(crate) fn constant(c: GaussRat) -> Poly {
        let mut p = Poly::zero();
        p.add_term(Mono::unit(), c);
        p
    }

    pub(crate) fn single(m: Mono, c: GaussRat) -> Poly {
        let mut p = Poly::zero();
        p.add_term(m, c);
        p
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn add_term(&mut self, m: Mono, c: GaussRat) {
        if c.is_zero() {
            return;
        }
        match self.0.entry(m) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = &*o.get() + &c;
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, c) in &other.0 {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    /// Leading (largest) monomial and coefficient; polynomial must be nonzero.
    fn leading(&self) -> (&Mono, &GaussRat) {
        self.0.iter().next_back().expect("leading term of zero polynomial")
    }

    /// Scale so the leading coefficient is one; returns the extracted factor.
    fn scaled_monic(&self) -> (GaussRat, Poly) {
        let lead = self.leading().1.clone();
        if lead.is_one() {
            return (lead, self.clone());
        }
        let inv = lead.inv().expect("nonzero leading coefficient");
        let mut out = Poly::zero();
        for (m, c) in &self.0 {
            out.add_term(m.clone(), c * &inv);
        }
        (lead, out)
    }
}

impl Nf {
    pub(crate) fn zero() -> Nf {
        Nf::default()
    }

    pub(crate) fn one() -> Nf {
        Nf::constant(GaussRat::one())
    }

    pub(crate) fn constant(c: GaussRat) -> Nf {
        Nf { num: Poly::constant(c), den: Den::new() }
    }

    pub(crate) fn atom(a: Atom) -> Nf {
        Nf { num: Poly::single(Mono::atom(a), GaussRat::one()), den: Den::new() }
    }

    pub(crate) fn is_zero(&self) -> bool {
        self.num.is_zero()
    }
}

// ---------------------------------------------------------------------------
// Denominator bookkeeping
// ---------------------------------------------------------------------------

fn den_union(a: &Den, b: &Den) -> Den {
    let mut out = a.clone();
    for (k, v) in b {
        *out.entry(k.clone()).or_insert(0) += v;
    }
    out
}

fn den_lcm(a: &Den, b: &Den) -> Den {
    let mut out = a.clone();
    for (k, v) in b {
        let e = out.entry(k.clone()).or_insert(0);
        *e = (*e).max(*v);
    }
    out
}

fn den_complement(lcm: &Den, own: &Den) -> Vec<(Atom, u32)> {
    let mut out = Vec::new();
    for (k, v) in lcm {
        let have = own.get(k).copied().unwrap_or(0);
        if *v > have {
            out.push((k.clone(), v - have));
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Term normalization
// ---------------------------------------------------------------------------

/// Raw exponent map before invariants are enforced.
type RawMap = BTreeMap<Atom, QExp>;

fn raw_of_mono(m: &Mono) -> RawMap {
    m.0.clone()
}

fn raw_merge(a: &Mono, b: &Mono) -> RawMap {
    let mut out = raw_of_mono(a);
    for (atom, q) in &b.0 {
        match out.entry(atom.clone()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(q.clone());
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = o.get().add(q);
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }
    out
}

fn raw_push(raw: &mut RawMap, atom: Atom, q: QExp) {
    match raw.entry(atom) {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(q);
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            let s = o.get().add(&q);
            if s.is_zero() {
                o.remove();
            } else {
                *o.get_mut() = s;
            }
        }
    }
}

/// Normalize a single raw term (coefficient times atom powers) into a
/// fraction satisfying all monomial/denominator invariants.
fn term_to_nf(coeff: GaussRat, raw: RawMap) -> Result<Nf> {
    if coeff.is_zero() {
        return Ok(Nf::zero());
    }
    let mut coeff = coeff;
    let mut mono = BTreeMap::new();
    let mut den = Den::new();
    let mut expansions: Vec<(Poly, u32)> = Vec::new();
    let mut exp_parts: Vec<Expr> = Vec::new();

    for (atom, q) in raw {
        if q.is_zero() {
            continue;
        }
        if let Atom::Exp(arg) = &atom {
            // Fold exponent weight into the argument; collected below.
            let weighted = if q.is_one() {
                arg.clone()
            } else {
                Expr::mul(q.to_expr(), arg.clone())
            };
            exp_parts.push(weighted);
            continue;
        }
        match q.as_rational() {
            Some(r) if r.is_integer() => {
                let n = r.to_integer();
                if n.is_positive() {
                    if let Atom::Sum(p) = atom {
                        let pw = n.to_u32().ok_or_else(|| {
                            Error::BadExponent("sum power too large to expand".into())
                        })?;
                        expansions.push((p, pw));
                    } else {
                        mono.insert(atom, q);
                    }
                } else {
                    let pw = (-n.clone()).to_u32().ok_or_else(|| {
                        Error::BadExponent("denominator power too large".into())
                    })?;
                    let scaled = match atom {
                        Atom::Sum(p) => {
                            let (lead, monic) = p.scaled_monic();
                            let inv_pow = lead
                                .pow_int(-(pw as i64))
                                .expect("nonzero leading coefficient");
                            coeff = &coeff * &inv_pow;
                            Atom::Sum(monic)
                        }
                        other => other,
                    };
                    *den.entry(scaled).or_insert(0) += pw;
                }
            }
            Some(r) => {
                // Non-integer rational exponent.
                if r.is_positive() {
                    mono.insert(atom, q);
                } else {
                    let fl = r.floor();
                    let frac = r - &fl;
                    let pw = (-fl.to_integer()).to_u32().ok_or_else(|| {
                        Error::BadExponent("denominator power too large".into())
                    })?;
                    mono.insert(atom.clone(), QExp::from_rational(frac));
                    let scaled = match atom {
                        Atom::Sum(p) => {
                            let (lead, monic) = p.scaled_monic();
                            let inv_pow = lead
                                .pow_int(-(pw as i64))
                                .expect("nonzero leading coefficient");
                            coeff = &coeff * &inv_pow;
                            Atom::Sum(monic)
                        }
                        other => other,
                    };
                    *den.entry(scaled).or_insert(0) += pw;
                }
            }
            None => {
                // Symbolic exponent: kept as-is on the atom.
                mono.insert(atom, q);
            }
        }
    }

    if !exp_parts.is_empty() {
        let arg = canonicalize(&Expr::sum(exp_parts))?;
        if !arg.is_zero() {
            mono.insert(Atom::Exp(arg), QExp::one());
        }
    }

    let mut out = Nf { num: Poly::single(Mono(mono), coeff), den };
    for (p, pw) in expansions {
        let factor = Nf { num: p, den: Den::new() };
        for _ in 0..pw {
            out = nf_mul(&out, &factor)?;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fraction arithmetic
// ---------------------------------------------------------------------------

/// Sum a list of fractions over a common denominator. Worklist formulation:
/// multiplying a numerator by denominator complements may itself normalize
/// into new denominator contributions (only with exotic symbolic exponents),
/// in which case the common denominator grows and the pass repeats.
fn combine(mut pieces: Vec<Nf>) -> Result<Nf> {
    pieces.retain(|p| !p.is_zero());
    if pieces.is_empty() {
        return Ok(Nf::zero());
    }
    for _round in 0..64 {
        let mut lcm = Den::new();
        for p in &pieces {
            lcm = den_lcm(&lcm, &p.den);
        }
        let mut flat: Vec<Nf> = Vec::new();
        let mut settled = true;
        for p in pieces {
            let comp = den_complement(&lcm, &p.den);
            if comp.is_empty() {
                flat.push(p);
                continue;
            }
            for (m, c) in &p.num.0 {
                let mut raw = raw_of_mono(m);
                for (atom, pw) in &comp {
                    raw_push(&mut raw, atom.clone(), QExp::from_int(*pw as i64));
                }
                let mut t = term_to_nf(c.clone(), raw)?;
                if !t.den.is_empty() {
                    settled = false;
                }
                t.den = den_union(&t.den, &lcm);
                if !t.is_zero() {
                    flat.push(t);
                }
            }
        }
        if settled && flat.iter().all(|p| p.den == lcm || p.is_zero()) {
            let mut num = Poly::zero();
            for p in &flat {
                num = num.add(&p.num);
            }
            let mut out = Nf { num, den: lcm };
            cancel(&mut out);
            return Ok(out);
        }
        pieces = flat;
    }
    Err(Error::FixpointNotReached(
        "fraction combination over a common denominator".into(),
    ))
}

fn nf_mul(a: &Nf, b: &Nf) -> Result<Nf> {
    if a.is_zero() || b.is_zero() {
        return Ok(Nf::zero());
    }
    let base = den_union(&a.den, &b.den);
    let mut pieces = Vec::new();
    for (ma, ca) in &a.num.0 {
        for (mb, cb) in &b.num.0 {
            let raw = raw_merge(ma, mb);
            let mut t = term_to_nf(ca * cb, raw)?;
            t.den = den_union(&t.den, &base);
            pieces.push(t);
        }
    }
    combine(pieces)
}

/// Integer monomial content shared by every monomial of a polynomial, and
/// the polynomial with that content divided out. Splitting `t*(S)` off as
/// `t` times `S` keeps inverses of products factored instead of fused into
/// one sum atom.
fn extract_monomial_content(p: &Poly) -> (Mono, Poly) {
    let first = match p.0.keys().next() {
        Some(m) => m.clone(),
        None => return (Mono::unit(), p.clone()),
    };
    let mut content: Vec<(Atom, i64)> = Vec::new();
    for (atom, _) in &first.0 {
        let mut k: Option<i64> = None;
        for (mono, _) in &p.0 {
            let fl = match mono.0.get(atom) {
                Some(q) => q.rat.floor().to_integer().to_i64().unwrap_or(0),
                None => 0,
            };
            k = Some(k.map_or(fl, |cur| cur.min(fl)));
            if k == Some(0) {
                break;
            }
        }
        let k = k.unwrap_or(0);
        if k > 0 {
            content.push((atom.clone(), k));
        }
    }
    if content.is_empty() {
        return (Mono::unit(), p.clone());
    }
    let mut cm = BTreeMap::new();
    for (atom, k) in &content {
        cm.insert(atom.clone(), QExp::from_int(*k));
    }
    let mut rest = Poly::zero();
    for (mono, c) in &p.0 {
        let mut m = mono.0.clone();
        for (atom, k) in &content {
            let q = m.get(atom).expect("content atom present").clone();
            let reduced = q.add(&QExp::from_int(-k));
            if reduced.is_zero() {
                m.remove(atom);
            } else {
                m.insert(atom.clone(), reduced);
            }
        }
        rest.add_term(Mono(m), c.clone());
    }
    (Mono(cm), rest)
}

/// Multiplicative inverse.
fn nf_inv(a: &Nf) -> Result<Nf> {
    if a.is_zero() {
        return Err(Error::DivisionByZero);
    }
    // den / num: the old denominator becomes a raw positive term.
    let mut den_raw = RawMap::new();
    for (atom, pw) in &a.den {
        raw_push(&mut den_raw, atom.clone(), QExp::from_int(*pw as i64));
    }
    let den_as_nf = term_to_nf(GaussRat::one(), den_raw)?;
    debug_assert!(den_as_nf.den.is_empty());
    if a.num.0.len() == 1 {
        let (m, c) = a.num.0.iter().next().expect("single term");
        let mut raw = RawMap::new();
        for (atom, q) in &m.0 {
            raw_push(&mut raw, atom.clone(), q.neg());
        }
        let mut inv = term_to_nf(c.inv().expect("nonzero coefficient"), raw)?;
        inv = nf_mul(&inv, &den_as_nf)?;
        return Ok(inv);
    }
    let (content, rest) = extract_monomial_content(&a.num);
    let (lead, monic) = rest.scaled_monic();
    let mut out = nf_mul(
        &Nf::constant(lead.inv().expect("nonzero leading coefficient")),
        &den_as_nf,
    )?;
    if !content.0.is_empty() {
        let mut raw = RawMap::new();
        for (atom, q) in &content.0 {
            raw_push(&mut raw, atom.clone(), q.neg());
        }
        out = nf_mul(&out, &term_to_nf(GaussRat::one(), raw)?)?;
    }
    let mut den = Den::new();
    den.insert(Atom::Sum(monic), 1);
    out = nf_mul(&out, &Nf { num: Poly::constant(GaussRat::one()), den })?;
    Ok(out)
}

fn nf_pow_int(a: &Nf, n: i64) -> Result<Nf> {
    if n == 0 {
        return Ok(Nf::one());
    }
    if n < 0 {
        return nf_pow_int(&nf_inv(a)?, -n);
    }
    let mut acc = Nf::one();
    let mut base = a.clone();
    let mut n = n as u64;
    loop {
        if n & 1 == 1 {
            acc = nf_mul(&acc, &base)?;
        }
        n >>= 1;
        if n == 0 {
            break;
        }
        base = nf_mul(&base, &base)?;
    }
    Ok(acc)
}

fn nf_pow(a: &Nf, q: &QExp) -> Result<Nf> {
    if q.is_zero() {
        // Includes 0^0 -> 1: powers only arise with generic parameters here.
        return Ok(Nf::one());
    }
    if a.is_zero() {
        // A reciprocal of zero reads as a division; deeper negative powers
        // report the power itself.
        return match q.as_rational() {
            Some(r) if r.is_positive() => Ok(Nf::zero()),
            Some(r) if *r == -BigRational::one() => Err(Error::DivisionByZero),
            Some(_) => Err(Error::ZeroToNegativePower),
            None => Err(Error::BadExponent("symbolic power of zero".into())),
        };
    }
    if q.is_one() {
        return Ok(a.clone());
    }
    if let Some(n) = q.as_integer() {
        let n = n.to_i64().ok_or_else(|| Error::BadExponent("power too large".into()))?;
        return nf_pow_int(a, n);
    }
    // Non-integer (or symbolic) exponent: distribute over the atoms and the
    // denominator of the base; a multi-term numerator becomes a sum atom.
    // Numeric coefficients have no exact fractional power, but a -1 can hide
    // in the orientation of the polynomials: when flipping the numerator
    // and/or denominator polys to the constant-positive orientation cancels
    // the sign exactly (still at integer exponents, before the fractional
    // power applies), the flipped forms are used, so a power and its
    // composed reciprocal meet in the same atom. An uncancelled sign keeps
    // the written orientation, and a leftover coefficient is an error.
    let flip_poly = |p: &Poly| -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &p.0 {
            out.add_term(m.clone(), -c);
        }
        out
    };
    let wants_flip = |p: &Poly| -> bool {
        let c = p.0.values().next().expect("nonzero polynomial");
        matches!(c.as_rational(), Some(r) if r.is_negative())
    };

    let single = if a.num.0.len() == 1 {
        Some(a.num.0.iter().next().expect("single term"))
    } else {
        None
    };
    let mut scalar = match single {
        Some((_, c)) => c.clone(),
        None => GaussRat::one(),
    };
    let num_flip = single.is_none() && wants_flip(&a.num);
    if num_flip {
        scalar = -&scalar;
    }
    let mut den_flipped: BTreeMap<Atom, Poly> = BTreeMap::new();
    for (atom, pw) in &a.den {
        if let Atom::Sum(p) = atom {
            if wants_flip(p) {
                if pw % 2 == 1 {
                    scalar = -&scalar;
                }
                den_flipped.insert(atom.clone(), flip_poly(p));
            }
        }
    }
    let use_flips = scalar.is_one();
    if !use_flips {
        if let Some((_, c)) = single {
            if !c.is_one() {
                return Err(Error::BadExponent(format!(
                    "non-integer power of numeric coefficient {}",
                    c
                )));
            }
        }
    }

    let mut raw = RawMap::new();
    match single {
        Some((m, _)) => {
            for (atom, e) in &m.0 {
                raw_push(&mut raw, atom.clone(), e.try_mul(q)?);
            }
        }
        None => {
            let p = if use_flips && num_flip { flip_poly(&a.num) } else { a.num.clone() };
            raw_push(&mut raw, Atom::Sum(p), q.clone());
        }
    }
    for (atom, pw) in &a.den {
        let key = match den_flipped.get(atom) {
            Some(p) if use_flips => Atom::Sum(p.clone()),
            _ => atom.clone(),
        };
        raw_push(&mut raw, key, q.scale(&-BigRational::from_integer(BigInt::from(*pw))));
    }
    term_to_nf(GaussRat::one(), raw)
}

// ---------------------------------------------------------------------------
// Numerator/denominator cancellation
// ---------------------------------------------------------------------------

/// Integer powers a monomial can supply toward a denominator atom. Returns
/// the count and, for a scaled-sum match, the mono's atom plus the rational
/// scale (mono atom polynomial = scale * den atom polynomial).
fn avail_in_mono(mono: &Mono, target: &Atom) -> (u32, Option<(Atom, GaussRat)>) {
    let integer_part = |q: &QExp| -> u32 {
        match q.as_rational() {
            Some(r) => {
                let fl = r.floor().to_integer();
                if fl.is_positive() {
                    fl.to_u32().unwrap_or(0)
                } else {
                    0
                }
            }
            None => 0,
        }
    };
    if let Some(q) = mono.0.get(target) {
        return (integer_part(q), None);
    }
    if let Atom::Sum(target_poly) = target {
        for (atom, q) in &mono.0 {
            if let Atom::Sum(p) = atom {
                let (lead, monic) = p.scaled_monic();
                if &monic == target_poly && !lead.is_one() {
                    return (integer_part(q), Some((atom.clone(), lead)));
                }
            }
        }
    }
    (0, None)
}

/// Quotient of two monomials, or None when it would leave the monomial
/// domain (a missing atom, a non-positive pure-rational exponent, or an
/// integer power landing on a sum atom, which numerators always expand).
fn mono_div(m: &Mono, d: &Mono) -> Option<Mono> {
    let mut out = m.0.clone();
    for (atom, qd) in &d.0 {
        let qm = out.get(atom)?.clone();
        let diff = qm.add(&qd.neg());
        if diff.is_zero() {
            out.remove(atom);
            continue;
        }
        if diff.syms.is_empty() {
            let r = diff.as_rational().expect("pure rational exponent");
            if !r.is_positive() {
                return None;
            }
            if matches!(atom, Atom::Sum(_)) && r.is_integer() {
                return None;
            }
        }
        out.insert(atom.clone(), diff);
    }
    Some(Mono(out))
}

/// Product of two monomials under the same conservatism as `mono_div`.
fn mono_mul(a: &Mono, b: &Mono) -> Option<Mono> {
    let mut out = a.0.clone();
    for (atom, qb) in &b.0 {
        let merged = match out.get(atom) {
            Some(qa) => qa.add(qb),
            None => qb.clone(),
        };
        if merged.is_zero() {
            out.remove(atom);
            continue;
        }
        if merged.syms.is_empty() {
            let r = merged.as_rational().expect("pure rational exponent");
            if !r.is_positive() {
                return None;
            }
            let integer_on_special =
                r.is_integer() && matches!(atom, Atom::Sum(_) | Atom::Exp(_));
            if integer_on_special && !r.is_one() {
                return None;
            }
        }
        out.insert(atom.clone(), merged);
    }
    Some(Mono(out))
}

/// Exact multivariate long division: Some(quotient) only when the remainder
/// vanishes. Bails out (None) on any step outside the monomial domain or
/// past the iteration cap, so a failure merely skips a simplification.
fn poly_div_exact(n: &Poly, d: &Poly) -> Option<Poly> {
    let (lm_d, lc_d) = d.leading();
    let lm_d = lm_d.clone();
    let lc_inv = lc_d.inv().expect("nonzero divisor");
    let mut r = n.clone();
    let mut q = Poly::zero();
    for _ in 0..4096 {
        if r.is_zero() {
            return Some(q);
        }
        let (lm_r, lc_r) = r.leading();
        let lm_r = lm_r.clone();
        let qc = &lc_r.clone() * &lc_inv;
        let qm = mono_div(&lm_r, &lm_d)?;
        for (m, c) in &d.0 {
            r.add_term(mono_mul(&qm, m)?, -&(&qc * c));
        }
        q.add_term(qm, qc);
    }
    None
}

/// Cancel common factors between numerator and denominator: integer atom
/// powers shared by every numerator monomial first, then denominator
/// sum-atoms that exactly divide the expanded numerator. Each successful
/// division can expose new monomial factors, so the two passes alternate to
/// a fixpoint (total denominator power strictly decreases every round).
fn cancel(nf: &mut Nf) {
    if nf.num.is_zero() {
        nf.den.clear();
        return;
    }
    loop {
        cancel_monomial_factors(nf);
        if !cancel_divisible_sums(nf) {
            return;
        }
    }
}

/// Strip den atoms that appear (with integer power) in every num monomial.
fn cancel_monomial_factors(nf: &mut Nf) {
    let targets: Vec<(Atom, u32)> = nf.den.iter().map(|(a, p)| (a.clone(), *p)).collect();
    for (atom, p) in targets {
        let mut take = p;
        for (mono, _) in &nf.num.0 {
            let (avail, _) = avail_in_mono(mono, &atom);
            take = take.min(avail);
            if take == 0 {
                break;
            }
        }
        if take == 0 {
            continue;
        }
        let mut new_num = Poly::zero();
        for (mono, c) in &nf.num.0 {
            let (_, matched) = avail_in_mono(mono, &atom);
            let key = matched.as_ref().map(|(a, _)| a.clone()).unwrap_or_else(|| atom.clone());
            let mut m = mono.0.clone();
            let q = m.get(&key).expect("cancellation target present").clone();
            let reduced = q.add(&QExp::from_int(-(take as i64)));
            if reduced.is_zero() {
                m.remove(&key);
            } else {
                m.insert(key, reduced);
            }
            let mut c2 = c.clone();
            if let Some((_, scale)) = matched {
                c2 = &c2 * &scale.pow_int(take as i64).expect("nonzero scale");
            }
            new_num.add_term(Mono(m), c2);
        }
        nf.num = new_num;
        let left = p - take;
        if left == 0 {
            nf.den.remove(&atom);
        } else {
            nf.den.insert(atom, left);
        }
    }

}

/// An expanded numerator can be divisible by a denominator sum-atom without
/// any single monomial carrying it as a factor; trial exact division catches
/// those. No general factorization is attempted. A single-monomial numerator
/// cannot be a multiple of a multi-term monic polynomial, so those skip the
/// attempt. Returns whether any denominator power was removed.
fn cancel_divisible_sums(nf: &mut Nf) -> bool {
    let mut changed = false;
    let sums: Vec<(Atom, u32)> = nf
        .den
        .iter()
        .filter(|(a, _)| matches!(a, Atom::Sum(_)))
        .map(|(a, p)| (a.clone(), *p))
        .collect();
    for (atom, p) in sums {
        if nf.num.0.len() <= 1 {
            break;
        }
        let d = match &atom {
            Atom::Sum(d) => d.clone(),
            _ => unreachable!("filtered to sum atoms"),
        };
        let mut left = p;
        while left > 0 && nf.num.0.len() > 1 {
            match poly_div_exact(&nf.num, &d) {
                Some(q) => {
                    nf.num = q;
                    left -= 1;
                }
                None => break,
            }
        }
        if left == p {
            continue;
        }
        changed = true;
        if left == 0 {
            nf.den.remove(&atom);
        } else {
            nf.den.insert(atom, left);
        }
    }
    changed
}

// ---------------------------------------------------------------------------
// Expression -> NF
// ---------------------------------------------------------------------------

struct Canonizer {
    cache: HashMap<*const Node, Nf>,
}

impl Canonizer {
    fn nf(&mut self, e: &Expr) -> Result<Nf> {
        let key = std::sync::Arc::as_ptr(&e.0);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit.clone());
        }
        let out = self.nf_uncached(e)?;
        self.cache.insert(key, out.clone());
        Ok(out)
    }

    fn nf_uncached(&mut self, e: &Expr) -> Result<Nf> {
        match e.node() {
            Node::Num(c) => Ok(Nf::constant(c.clone())),
            Node::Indep(i) => Ok(Nf::atom(Atom::Indep(*i))),
            Node::Jet(j) => Ok(Nf::atom(Atom::Jet(j.clone()))),
            Node::Const { id, conj } => Ok(Nf::atom(Atom::Const { id: *id, conj: *conj })),
            Node::Func { id, orders, args, conj } => {
                let mut cargs = Vec::with_capacity(args.len());
                for a in args {
                    cargs.push(rebuild(&self.nf(a)?));
                }
                Ok(Nf::atom(Atom::Func {
                    id: *id,
                    orders: orders.clone(),
                    args: cargs,
                    conj: *conj,
                }))
            }
            Node::Exp(u) => {
                let cu = rebuild(&self.nf(u)?);
                if cu.is_zero() {
                    return Ok(Nf::one());
                }
                Ok(Nf::atom(Atom::Exp(cu)))
            }
            Node::Sum(xs) => {
                let mut pieces = Vec::with_capacity(xs.len());
                for x in xs {
                    pieces.push(self.nf(x)?);
                }
                combine(pieces)
            }
            Node::Prod(xs) => {
                let mut acc = Nf::one();
                for x in xs {
                    acc = nf_mul(&acc, &self.nf(x)?)?;
                    if acc.is_zero() {
                        return Ok(acc);
                    }
                }
                Ok(acc)
            }
            Node::Pow(b, q) => {
                let nb = self.nf(b)?;
                nf_pow(&nb, q)
            }
        }
    }
}

/// Canonical normal form of an expression (crate-internal entry point).
pub(crate) fn nf_of(e: &Expr) -> Result<Nf> {
    Canonizer { cache: HashMap::new() }.nf(e)
}

// ---------------------------------------------------------------------------
// NF -> canonical expression
// ---------------------------------------------------------------------------

fn atom_expr(a: &Atom) -> Expr {
    match a {
        Atom::Const { id, conj } => Expr::cnst_flag(*id, *conj),
        Atom::Indep(i) => Expr::indep(*i),
        Atom::Jet(j) => Expr::jet(j.clone()),
        Atom::Func { id, orders, args, conj } => {
            Expr::func_flag(*id, orders.clone(), args.clone(), *conj)
        }
        Atom::Exp(arg) => Expr::exp(arg.clone()),
        Atom::Sum(p) => poly_expr(p),
    }
}

fn factor_expr(a: &Atom, q: &QExp) -> Expr {
    let base = atom_expr(a);
    if q.is_one() {
        base
    } else {
        Expr::powq(base, q.clone())
    }
}

/// Term as a list of product factors (coefficient first when it matters).
fn term_factors(m: &Mono, c: &GaussRat) -> Vec<Expr> {
    let mut factors = Vec::new();
    if !c.is_one() || m.0.is_empty() {
        factors.push(Expr::num(c.clone()));
    }
    for (a, q) in &m.0 {
        factors.push(factor_expr(a, q));
    }
    factors
}

fn term_expr(m: &Mono, c: &GaussRat) -> Expr {
    Expr::prod(term_factors(m, c))
}

fn poly_expr(p: &Poly) -> Expr {
    if p.is_zero() {
        return Expr::zero();
    }
    // Leading monomial first.
    let terms: Vec<Expr> = p.0.iter().rev().map(|(m, c)| term_expr(m, c)).collect();
    Expr::sum(terms)
}

/// Rebuild the unique canonical tree of a normal form.
pub(crate) fn rebuild(nf: &Nf) -> Expr {
    if nf.num.is_zero() {
        return Expr::zero();
    }
    let den_factors: Vec<Expr> = nf
        .den
        .iter()
        .map(|(a, p)| Expr::powq(atom_expr(a), QExp::from_int(-(*p as i64))))
        .collect();
    if den_factors.is_empty() {
        return poly_expr(&nf.num);
    }
    if nf.num.0.len() == 1 {
        let (m, c) = nf.num.0.iter().next().expect("single term");
        let mut factors = term_factors(m, c);
        factors.extend(den_factors);
        // Drop a coefficient of one when other factors carry the term.
        if factors.len() > 1 && factors[0].is_one() {
            factors.remove(0);
        }
        return Expr::prod(factors);
    }
    let mut factors = vec![poly_expr(&nf.num)];
    factors.extend(den_factors);
    Expr::prod(factors)
}

/// Canonicalize: normal form, then the unique rebuilt tree.
pub fn canonicalize(e: &Expr) -> Result<Expr> {
    Ok(rebuild(&nf_of(e)?))
}

// ---------------------------------------------------------------------------
// Coefficient collection
// ---------------------------------------------------------------------------

/// Is the atom free of independent variables and jet coordinates (looking
/// through function arguments, exponentials, and parked sums)?
pub(crate) fn atom_is_constant(a: &Atom) -> bool {
    atom_expr(a).is_constant()
}

/// Group the terms of `e` by the sub-monomial of atoms matched by `pred`.
///
/// Returns `(key, coefficient)` pairs, both canonical expressions, with the
/// key ascending in the frozen monomial order (the unit key, if present,
/// comes first). The grouping is exact: `e` equals the sum of key times
/// coefficient, and `e` is zero iff every coefficient is zero. A matched atom
/// in the denominator is rejected, since the terms then have no reading as a
/// polynomial in the collection variables.
pub(crate) fn collect_terms(
    sp: &crate::space::JetSpace,
    e: &Expr,
    pred: &dyn Fn(&Atom) -> bool,
) -> Result<Vec<(Expr, Expr)>> {
    let nf = nf_of(e)?;
    for a in nf.den.keys() {
        if pred(a) {
            return Err(Error::NotPolynomial(format!(
                "not polynomial in the collection variables: denominator contains {}",
                super::print::print(sp, &atom_expr(a))
            )));
        }
    }
    let mut groups: BTreeMap<Mono, Poly> = BTreeMap::new();
    for (mono, coeff) in &nf.num.0 {
        let mut key = Mono::unit();
        let mut rest = Mono::unit();
        for (a, q) in &mono.0 {
            if pred(a) {
                key.0.insert(a.clone(), q.clone());
            } else {
                rest.0.insert(a.clone(), q.clone());
            }
        }
        groups.entry(key).or_insert_with(Poly::zero).add_term(rest, coeff.clone());
    }
    let mut out = Vec::new();
    for (key, poly) in groups {
        if poly.is_zero() {
            continue;
        }
        let key_expr = rebuild(&Nf { num: Poly::single(key, GaussRat::one()), den: Den::new() });
        let coeff_expr = rebuild(&Nf { num: poly, den: nf.den.clone() });
        out.push((key_expr, coeff_expr));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::JetSpace;

    fn sp() -> JetSpace {
        let mut sp = JetSpace::schrodinger(2);
        sp.add_const("gamma", true);
        sp.add_const("k", true);
        sp.add_const("mu", true);
        sp
    }

    fn jet0(sp: &JetSpace, name: &str) -> Expr {
        Expr::jet(sp.jet0(sp.dep_id(name).unwrap()))
    }

    #[test]
    fn commutativity_folds_to_zero() {
        let s = sp();
        let psi = jet0(&s, "psi");
        let w = jet0(&s, "W");
        let e = Expr::sub(
            Expr::mul(psi.clone(), w.clone()),
            Expr::mul(w, psi),
        );
        assert!(e.canonicalize().unwrap().is_zero());
    }

    #[test]
    fn exp_cancellation() {
        let s = sp();
        let g = Expr::cnst(s.const_id("gamma").unwrap());
        let t = Expr::indep(0);
        let gt = Expr::mul(g, t);
        let e = Expr::mul(Expr::exp(gt.clone()), Expr::exp(Expr::neg(gt)));
        assert!(e.canonicalize().unwrap().is_one());
    }

    #[test]
    fn expand_and_refactor_agree() {
        let s = sp();
        let t = Expr::indep(0);
        let x1 = Expr::indep(1);
        let x2 = Expr::indep(2);
        let b = Expr::cnst(s.const_id("mu").unwrap());
        let shifted = Expr::sub(x1.clone(), Expr::mul(t.clone(), b.clone()));
        let compact = Expr::add(
            Expr::powi(shifted.clone(), 2),
            Expr::powi(x2.clone(), 2),
        );
        let expanded = Expr::sum(vec![
            Expr::powi(x1.clone(), 2),
            Expr::prod(vec![Expr::int(-2), t.clone(), b.clone(), x1.clone()]),
            Expr::prod(vec![t.clone(), t.clone(), b.clone(), b.clone()]),
            Expr::powi(x2.clone(), 2),
        ]);
        assert_eq!(
            compact.canonicalize().unwrap(),
            expanded.canonicalize().unwrap()
        );
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let s = sp();
        let psi = jet0(&s, "psi");
        let x1 = Expr::indep(1);
        let e = Expr::div(
            Expr::add(Expr::mul(psi.clone(), x1.clone()), Expr::powi(x1.clone(), 3)),
            Expr::add(Expr::powi(x1.clone(), 2), Expr::int(1)),
        );
        let c1 = e.canonicalize().unwrap();
        let c2 = c1.canonicalize().unwrap();
        assert_eq!(c1, c2);
    }

    #[test]
    fn monomial_cancellation_against_denominator() {
        let s = sp();
        let x1 = Expr::indep(1);
        let a = jet0(&s, "psi");
        let b = jet0(&s, "cpsi");
        // (a/x + b) * x == a + b*x
        let e = Expr::mul(
            Expr::add(Expr::div(a.clone(), x1.clone()), b.clone()),
            x1.clone(),
        );
        let expect = Expr::add(a, Expr::mul(b, x1));
        assert_eq!(
            e.canonicalize().unwrap(),
            expect.canonicalize().unwrap()
        );
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let zero = Expr::sub(Expr::indep(1), Expr::indep(1));
        let e = Expr::div(Expr::one(), zero);
        assert!(matches!(e.canonicalize(), Err(Error::DivisionByZero)));
        let p = Expr::powi(Expr::zero(), -2);
        assert!(matches!(p.canonicalize(), Err(Error::ZeroToNegativePower)));
    }

    #[test]
    fn fractional_powers_of_sums() {
        let s = sp();
        let t = Expr::indep(0);
        let mu = Expr::cnst(s.const_id("mu").unwrap());
        let base = Expr::sub(Expr::one(), Expr::mul(mu.clone(), t.clone()));
        // S^(1/2) * S^(3/2) = S^2 expands to a polynomial.
        let e = Expr::mul(
            Expr::powq(base.clone(), QExp::from_ratio(1, 2)),
            Expr::powq(base.clone(), QExp::from_ratio(3, 2)),
        );
        let expect = Expr::powi(base.clone(), 2);
        assert_eq!(e.canonicalize().unwrap(), expect.canonicalize().unwrap());
        // S^(1/2) / S = S^(-1/2): fractional part stays up, integer part down.
        let f = Expr::div(Expr::powq(base.clone(), QExp::from_ratio(1, 2)), base.clone());
        let g = Expr::powq(base.clone(), QExp::from_ratio(-1, 2));
        assert_eq!(f.canonicalize().unwrap(), g.canonicalize().unwrap());
    }

    #[test]
    fn symbolic_exponents_merge() {
        let s = sp();
        let k = s.const_id("k").unwrap();
        let psi = jet0(&s, "psi");
        let half_k = QExp::sym(k, false).scale(&BigRational::new(1.into(), 2.into()));
        // psi^(k/2) * psi^(k/2) = psi^k
        let e = Expr::mul(
            Expr::powq(psi.clone(), half_k.clone()),
            Expr::powq(psi.clone(), half_k),
        );
        let expect = Expr::powq(psi.clone(), QExp::sym(k, false));
        assert_eq!(e.canonicalize().unwrap(), expect.canonicalize().unwrap());
    }

    #[test]
    fn expanded_numerators_cancel_divisible_sum_denominators() {
        let x = Expr::indep(1);
        // (x+1)(x-1) expands in the numerator, so the shared factor is only
        // visible to exact division: (x^2-1)/(x-1) = x+1.
        let num = Expr::mul(
            Expr::add(x.clone(), Expr::one()),
            Expr::sub(x.clone(), Expr::one()),
        );
        let e = Expr::div(num, Expr::sub(x.clone(), Expr::one()));
        let expect = Expr::add(x.clone(), Expr::one());
        assert_eq!(e.canonicalize().unwrap(), expect.canonicalize().unwrap());

        // A square in the denominator comes out one exact division at a time.
        let s = sp();
        let t = Expr::indep(0);
        let mu = Expr::cnst(s.const_id("mu").unwrap());
        let base = Expr::sub(Expr::one(), Expr::mul(mu.clone(), t.clone()));
        let f = Expr::div(
            Expr::mul(
                Expr::add(mu.clone(), Expr::one()),
                Expr::powi(base.clone(), 2),
            ),
            Expr::mul(Expr::powi(base.clone(), 2), t.clone()),
        );
        let g = Expr::div(Expr::add(mu.clone(), Expr::one()), t.clone());
        assert_eq!(f.canonicalize().unwrap(), g.canonicalize().unwrap());

        // Non-divisible fractions keep their denominator.
        let h = Expr::div(
            Expr::add(Expr::powi(x.clone(), 2), Expr::one()),
            Expr::sub(x.clone(), Expr::one()),
        );
        let hc = h.canonicalize().unwrap();
        assert!(super::super::print::print(&s, &hc).contains("/(x1 - 1)"));
    }

    #[test]
    fn trig_lowering_gives_pythagoras() {
        let t = Expr::indep(0);
        let e = Expr::sub(
            Expr::add(
                Expr::powi(Expr::sin(t.clone()), 2),
                Expr::powi(Expr::cos(t.clone()), 2),
            ),
            Expr::one(),
        );
        assert!(e.canonicalize().unwrap().is_zero());
    }

    #[test]
    fn zero_is_unique() {
        let s = sp();
        let psi = jet0(&s, "psi");
        let x = Expr::indep(1);
        let e = Expr::sub(
            Expr::div(psi.clone(), Expr::add(x.clone(), Expr::one())),
            Expr::div(psi, Expr::add(Expr::one(), x)),
        );
        let c = e.canonicalize().unwrap();
        assert!(c.is_zero());
        assert_eq!(c, Expr::zero());
    }
}
