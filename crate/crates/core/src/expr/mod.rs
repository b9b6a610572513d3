//! Immutable symbolic expressions over exact Gaussian-rational coefficients.
//!
//! An [`Expr`] is a reference-counted tree. Leaves are numbers, independent
//! variables, jet coordinates, opaque constants, and arbitrary-function
//! applications (which carry per-argument derivative orders). Interior nodes
//! are sums, products, powers with constant exponents, and the exponential.
//!
//! Trigonometric input is accepted by the constructors and the parser but is
//! lowered immediately to complex exponentials, so Pythagorean identities are
//! ordinary cancellations in the canonical form.
//!
//! Expressions are values: every operation is pure, and trees may be shared
//! freely across threads.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::number::GaussRat;
use crate::space::JetCoord;
use crate::{Error, Result};

pub mod canon;
pub mod conj;
pub mod diff;
pub mod eval;
pub mod parse;
pub mod print;
pub mod subst;

/// Exponent of a power node: an exact rational plus a rational-linear
/// combination of opaque constants. Every exponent the engine needs
/// (integers, half-integers, symbolic degrees like k/2) has this shape.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct QExp {
    pub rat: BigRational,
    /// (constant id, conjugation flag) -> rational coefficient; no zeros.
    pub syms: BTreeMap<(usize, bool), BigRational>,
}

impl QExp {
    pub fn zero() -> Self {
        QExp { rat: BigRational::zero(), syms: BTreeMap::new() }
    }

    pub fn one() -> Self {
        QExp::from_int(1)
    }

    pub fn from_int(n: i64) -> Self {
        QExp { rat: BigRational::from_integer(BigInt::from(n)), syms: BTreeMap::new() }
    }

    pub fn from_ratio(p: i64, q: i64) -> Self {
        QExp { rat: BigRational::new(BigInt::from(p), BigInt::from(q)), syms: BTreeMap::new() }
    }

    pub fn from_rational(r: BigRational) -> Self {
        QExp { rat: r, syms: BTreeMap::new() }
    }

    pub fn sym(id: usize, conj: bool) -> Self {
        let mut syms = BTreeMap::new();
        syms.insert((id, conj), BigRational::one());
        QExp { rat: BigRational::zero(), syms }
    }

    pub fn is_zero(&self) -> bool {
        self.rat.is_zero() && self.syms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.syms.is_empty() && self.rat.is_one()
    }

    /// Pure rational value, if there is no symbolic part.
    pub fn as_rational(&self) -> Option<&BigRational> {
        if self.syms.is_empty() {
            Some(&self.rat)
        } else {
            None
        }
    }

    pub fn as_integer(&self) -> Option<BigInt> {
        let r = self.as_rational()?;
        if r.is_integer() {
            Some(r.to_integer())
        } else {
            None
        }
    }

    pub fn add(&self, other: &QExp) -> QExp {
        let mut syms = self.syms.clone();
        for (k, v) in &other.syms {
            let entry = syms.entry(*k).or_insert_with(BigRational::zero);
            *entry += v;
            if entry.is_zero() {
                syms.remove(k);
            }
        }
        QExp { rat: &self.rat + &other.rat, syms }
    }

    pub fn neg(&self) -> QExp {
        self.scale(&-BigRational::one())
    }

    pub fn scale(&self, c: &BigRational) -> QExp {
        if c.is_zero() {
            return QExp::zero();
        }
        QExp {
            rat: &self.rat * c,
            syms: self.syms.iter().map(|(k, v)| (*k, v * c)).collect(),
        }
    }

    /// Product of two exponents; defined only when at least one side is a
    /// pure rational.
    pub fn try_mul(&self, other: &QExp) -> Result<QExp> {
        if let Some(r) = self.as_rational() {
            Ok(other.scale(r))
        } else if let Some(r) = other.as_rational() {
            Ok(self.scale(r))
        } else {
            Err(Error::BadExponent("product of two symbolic exponents".into()))
        }
    }

    /// The exponent as an expression (used by printing and differentiation).
    pub fn to_expr(&self) -> Expr {
        let mut terms = Vec::new();
        if !self.rat.is_zero() {
            terms.push(Expr::num(GaussRat::from_rational(self.rat.clone())));
        }
        for ((id, cj), coeff) in &self.syms {
            let sym = Expr::cnst_flag(*id, *cj);
            if coeff.is_one() {
                terms.push(sym);
            } else {
                terms.push(Expr::prod(vec![
                    Expr::num(GaussRat::from_rational(coeff.clone())),
                    sym,
                ]));
            }
        }
        match terms.len() {
            0 => Expr::zero(),
            1 => terms.pop().unwrap(),
            _ => Expr::sum(terms),
        }
    }
}

/// Expression node. Constructed through the [`Expr`] helpers; the canonical
/// form is produced by [`canon`].
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum Node {
    /// Exact complex-rational constant (covers the imaginary unit).
    Num(GaussRat),
    /// Independent variable.
    Indep(usize),
    /// Jet coordinate (order zero is the dependent variable itself).
    Jet(JetCoord),
    /// Opaque constant symbol; `conj` marks the conjugate of a non-real one.
    Const { id: usize, conj: bool },
    /// Arbitrary-function application with per-argument derivative orders;
    /// `conj` marks the conjugate of an opaque-conjugation function.
    Func { id: usize, orders: Vec<u32>, args: Vec<Expr>, conj: bool },
    Sum(Vec<Expr>),
    Prod(Vec<Expr>),
    /// Power with a constant exponent.
    Pow(Expr, QExp),
    /// The exponential function.
    Exp(Expr),
}

/// Immutable shared expression.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expr(pub(crate) Arc<Node>);

impl std::fmt::Debug for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl Expr {
    pub fn node(&self) -> &Node {
        &self.0
    }

    fn new(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn num(c: GaussRat) -> Expr {
        Expr::new(Node::Num(c))
    }

    pub fn zero() -> Expr {
        Expr::num(GaussRat::zero())
    }

    pub fn one() -> Expr {
        Expr::num(GaussRat::one())
    }

    pub fn int(n: i64) -> Expr {
        Expr::num(GaussRat::from_int(n))
    }

    pub fn ratio(p: i64, q: i64) -> Expr {
        Expr::num(GaussRat::from_ratio(p, q))
    }

    /// The imaginary unit.
    pub fn i() -> Expr {
        Expr::num(GaussRat::i())
    }

    pub fn indep(id: usize) -> Expr {
        Expr::new(Node::Indep(id))
    }

    pub fn jet(coord: JetCoord) -> Expr {
        Expr::new(Node::Jet(coord))
    }

    pub fn cnst(id: usize) -> Expr {
        Expr::cnst_flag(id, false)
    }

    pub fn cnst_flag(id: usize, conj: bool) -> Expr {
        Expr::new(Node::Const { id, conj })
    }

    pub fn func(id: usize, orders: Vec<u32>, args: Vec<Expr>) -> Expr {
        Expr::func_flag(id, orders, args, false)
    }

    pub fn func_flag(id: usize, orders: Vec<u32>, args: Vec<Expr>, conj: bool) -> Expr {
        assert_eq!(orders.len(), args.len(), "function orders/arguments mismatch");
        Expr::new(Node::Func { id, orders, args, conj })
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        match terms.len() {
            0 => Expr::zero(),
            1 => terms.into_iter().next().unwrap(),
            _ => Expr::new(Node::Sum(terms)),
        }
    }

    pub fn prod(factors: Vec<Expr>) -> Expr {
        match factors.len() {
            0 => Expr::one(),
            1 => factors.into_iter().next().unwrap(),
            _ => Expr::new(Node::Prod(factors)),
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::sum(vec![a, Expr::neg(b)])
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::prod(vec![a, b])
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::prod(vec![Expr::int(-1), e])
    }

    /// Quotient as a product with an inverted factor.
    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::prod(vec![a, Expr::powq(b, QExp::from_int(-1))])
    }

    pub fn powq(base: Expr, exp: QExp) -> Expr {
        Expr::new(Node::Pow(base, exp))
    }

    pub fn powi(base: Expr, n: i64) -> Expr {
        Expr::powq(base, QExp::from_int(n))
    }

    pub fn exp(arg: Expr) -> Expr {
        Expr::new(Node::Exp(arg))
    }

    /// cos u, lowered to (exp(iu) + exp(-iu))/2.
    pub fn cos(u: Expr) -> Expr {
        let iu = Expr::mul(Expr::i(), u);
        Expr::prod(vec![
            Expr::ratio(1, 2),
            Expr::sum(vec![Expr::exp(iu.clone()), Expr::exp(Expr::neg(iu))]),
        ])
    }

    /// sin u, lowered to (exp(iu) - exp(-iu))/(2i).
    pub fn sin(u: Expr) -> Expr {
        let iu = Expr::mul(Expr::i(), u);
        Expr::prod(vec![
            Expr::num(&GaussRat::from_ratio(-1, 2) * &GaussRat::i()),
            Expr::sum(vec![
                Expr::exp(iu.clone()),
                Expr::neg(Expr::exp(Expr::neg(iu))),
            ]),
        ])
    }

    /// Structural zero test; meaningful on canonicalized expressions, where
    /// zero is represented uniquely.
    pub fn is_zero(&self) -> bool {
        matches!(self.node(), Node::Num(c) if c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self.node(), Node::Num(c) if c.is_one())
    }

    pub fn as_num(&self) -> Option<&GaussRat> {
        match self.node() {
            Node::Num(c) => Some(c),
            _ => None,
        }
    }

    /// Canonical form; see [`canon`].
    pub fn canonicalize(&self) -> Result<Expr> {
        canon::canonicalize(self)
    }

    /// Walk every node of the tree (parents before children).
    pub fn walk<F: FnMut(&Expr)>(&self, f: &mut F) {
        f(self);
        match self.node() {
            Node::Sum(xs) | Node::Prod(xs) => {
                for x in xs {
                    x.walk(f);
                }
            }
            Node::Pow(b, _) => b.walk(f),
            Node::Exp(a) => a.walk(f),
            Node::Func { args, .. } => {
                for a in args {
                    a.walk(f);
                }
            }
            _ => {}
        }
    }

    /// All jet coordinates occurring in the tree.
    pub fn jets(&self) -> std::collections::BTreeSet<JetCoord> {
        let mut out = std::collections::BTreeSet::new();
        self.walk(&mut |e| {
            if let Node::Jet(j) = e.node() {
                out.insert(j.clone());
            }
        });
        out
    }

    /// Maximum jet order occurring in the tree (0 if none).
    pub fn max_jet_order(&self) -> u32 {
        self.jets().iter().map(|j| j.order()).max().unwrap_or(0)
    }

    /// Whether any node satisfies the predicate.
    pub fn contains<F: Fn(&Node) -> bool>(&self, pred: F) -> bool {
        let mut found = false;
        self.walk(&mut |e| {
            if pred(e.node()) {
                found = true;
            }
        });
        found
    }

    /// Free of independent variables and jet coordinates; function symbols
    /// applied to constant arguments count as constant.
    pub fn is_constant(&self) -> bool {
        !self.contains(|n| matches!(n, Node::Indep(_) | Node::Jet(_)))
    }
}

/// Convenience: exact equality of canonical forms.
pub fn semantically_equal(a: &Expr, b: &Expr) -> Result<bool> {
    Ok(Expr::sub(a.clone(), b.clone()).canonicalize()?.is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qexp_arithmetic() {
        let half = QExp::from_ratio(1, 2);
        let k = QExp::sym(3, false);
        let s = half.add(&k.scale(&BigRational::new(1.into(), 2.into())));
        assert_eq!(s.rat, BigRational::new(1.into(), 2.into()));
        assert!(s.as_rational().is_none());
        let cancel = s.add(&s.neg());
        assert!(cancel.is_zero());
        assert!(QExp::from_int(2).as_integer().is_some());
        assert!(k.try_mul(&k).is_err());
    }

    #[test]
    fn constructors_collapse_trivia() {
        assert_eq!(Expr::sum(vec![]), Expr::zero());
        assert_eq!(Expr::prod(vec![]), Expr::one());
        let x = Expr::indep(1);
        assert_eq!(Expr::sum(vec![x.clone()]), x);
    }
}
