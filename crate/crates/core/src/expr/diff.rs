//! Partial and total derivatives.
//!
//! Partial derivatives treat every jet coordinate as an independent symbol
//! (the jet-space partial). Total derivatives chain through the jet
//! structure: along an independent direction every jet bumps its order, and
//! for fields declared over a fibered base (extra dependent-variable slots)
//! the chain rule also runs through those slots. Both return unnormalized
//! trees; callers canonicalize when they need normal forms.

use crate::space::{BaseSlot, JetCoord, JetSpace};
use crate::{Error, Result};

use super::{Expr, Node};

/// A coordinate one can take a partial derivative with respect to.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum PartialVar {
    Indep(usize),
    Jet(JetCoord),
    /// Opaque constant (used for flow parameters).
    Const { id: usize, conj: bool },
}

/// Jet-space partial derivative of `e` with respect to `v` (syntactic).
pub fn partial(e: &Expr, v: &PartialVar) -> Result<Expr> {
    match e.node() {
        Node::Num(_) => Ok(Expr::zero()),
        Node::Indep(i) => Ok(if *v == PartialVar::Indep(*i) { Expr::one() } else { Expr::zero() }),
        Node::Jet(j) => Ok(match v {
            PartialVar::Jet(k) if k == j => Expr::one(),
            _ => Expr::zero(),
        }),
        Node::Const { id, conj } => Ok(match v {
            PartialVar::Const { id: vid, conj: vconj } if vid == id && vconj == conj => {
                Expr::one()
            }
            _ => Expr::zero(),
        }),
        Node::Func { id, orders, args, conj } => {
            let mut terms = Vec::new();
            for (s, arg) in args.iter().enumerate() {
                let da = partial(arg, v)?;
                if da.is_zero() {
                    continue;
                }
                let mut bumped = orders.clone();
                bumped[s] += 1;
                terms.push(Expr::mul(
                    Expr::func_flag(*id, bumped, args.clone(), *conj),
                    da,
                ));
            }
            Ok(Expr::sum(terms))
        }
        Node::Sum(xs) => {
            let mut terms = Vec::with_capacity(xs.len());
            for x in xs {
                terms.push(partial(x, v)?);
            }
            Ok(Expr::sum(terms))
        }
        Node::Prod(xs) => {
            let mut terms = Vec::new();
            for (i, x) in xs.iter().enumerate() {
                let dx = partial(x, v)?;
                if dx.is_zero() {
                    continue;
                }
                let mut factors: Vec<Expr> = xs.to_vec();
                factors[i] = dx;
                terms.push(Expr::prod(factors));
            }
            Ok(Expr::sum(terms))
        }
        Node::Pow(b, q) => {
            if let PartialVar::Const { id, conj } = v {
                if q.syms.contains_key(&(*id, *conj)) {
                    return Err(Error::BadExponent(format!(
                        "derivative with respect to a constant in exponent position \
                         would need a logarithm: {:?}",
                        v
                    )));
                }
            }
            let db = partial(b, v)?;
            if db.is_zero() {
                return Ok(Expr::zero());
            }
            let mut lowered = q.clone();
            lowered.rat -= num_rational::BigRational::from_integer(1.into());
            Ok(Expr::prod(vec![
                q.to_expr(),
                Expr::powq(b.clone(), lowered),
                db,
            ]))
        }
        Node::Exp(u) => {
            let du = partial(u, v)?;
            if du.is_zero() {
                return Ok(Expr::zero());
            }
            Ok(Expr::mul(e.clone(), du))
        }
    }
}

/// Total derivative along a base slot. `BaseSlot::Indep(c)` is the usual
/// total derivative `D_c`; `BaseSlot::Dep(d)` is the fiber-direction total
/// derivative for spaces where `d` is a base coordinate of some field (the
/// order-zero jet of `d` counts as that coordinate).
pub fn total_derivative(sp: &JetSpace, e: &Expr, slot: BaseSlot) -> Result<Expr> {
    match e.node() {
        Node::Num(_) | Node::Const { .. } => Ok(Expr::zero()),
        Node::Indep(i) => Ok(if slot == BaseSlot::Indep(*i) { Expr::one() } else { Expr::zero() }),
        Node::Jet(j) => {
            let base = &sp.deps[j.var].base;
            if let BaseSlot::Dep(d) = slot {
                if j.var == d && j.order() == 0 {
                    return Ok(Expr::one());
                }
            }
            // D_slot f = sum over base positions of D_slot(coordinate at the
            // position) times the bumped jet; for dependent-variable slots
            // the coordinate factor chains recursively.
            let mut terms = Vec::new();
            for (pos, bs) in base.iter().enumerate() {
                let factor = match bs {
                    BaseSlot::Indep(i) if slot == BaseSlot::Indep(*i) => Expr::one(),
                    BaseSlot::Indep(_) => Expr::zero(),
                    BaseSlot::Dep(d) => total_derivative(sp, &Expr::jet(sp.jet0(*d)), slot)?,
                };
                if factor.is_zero() {
                    continue;
                }
                if factor.is_one() {
                    terms.push(Expr::jet(j.bump(pos)));
                } else {
                    terms.push(Expr::mul(factor, Expr::jet(j.bump(pos))));
                }
            }
            Ok(Expr::sum(terms))
        }
        Node::Func { id, orders, args, conj } => {
            let mut terms = Vec::new();
            for (s, arg) in args.iter().enumerate() {
                let da = total_derivative(sp, arg, slot)?;
                if da.is_zero() {
                    continue;
                }
                let mut bumped = orders.clone();
                bumped[s] += 1;
                terms.push(Expr::mul(
                    Expr::func_flag(*id, bumped, args.clone(), *conj),
                    da,
                ));
            }
            Ok(Expr::sum(terms))
        }
        Node::Sum(xs) => {
            let mut terms = Vec::with_capacity(xs.len());
            for x in xs {
                terms.push(total_derivative(sp, x, slot)?);
            }
            Ok(Expr::sum(terms))
        }
        Node::Prod(xs) => {
            let mut terms = Vec::new();
            for (i, x) in xs.iter().enumerate() {
                let dx = total_derivative(sp, x, slot)?;
                if dx.is_zero() {
                    continue;
                }
                let mut factors: Vec<Expr> = xs.to_vec();
                factors[i] = dx;
                terms.push(Expr::prod(factors));
            }
            Ok(Expr::sum(terms))
        }
        Node::Pow(b, q) => {
            let db = total_derivative(sp, b, slot)?;
            if db.is_zero() {
                return Ok(Expr::zero());
            }
            let mut lowered = q.clone();
            lowered.rat -= num_rational::BigRational::from_integer(1.into());
            Ok(Expr::prod(vec![
                q.to_expr(),
                Expr::powq(b.clone(), lowered),
                db,
            ]))
        }
        Node::Exp(u) => {
            let du = total_derivative(sp, u, slot)?;
            if du.is_zero() {
                return Ok(Expr::zero());
            }
            Ok(Expr::mul(e.clone(), du))
        }
    }
}

/// Iterated total derivative: `orders[i]` applications along `base[i]`.
pub fn total_derivative_multi(
    sp: &JetSpace,
    e: &Expr,
    base: &[BaseSlot],
    orders: &[u32],
) -> Result<Expr> {
    assert_eq!(base.len(), orders.len(), "base/orders length mismatch");
    let mut cur = e.clone();
    for (slot, k) in base.iter().zip(orders) {
        for _ in 0..*k {
            cur = total_derivative(sp, &cur, *slot)?.canonicalize()?;
        }
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{DepConj, JetSpace};

    #[test]
    fn product_and_chain_rules() {
        let sp = JetSpace::schrodinger(1);
        let psi = sp.dep_id("psi").unwrap();
        let x = Expr::indep(1);
        let u = Expr::jet(sp.jet0(psi));
        // d/dx (x^2 * psi) = 2*x*psi + x^2*psi_x  (total derivative)
        let e = Expr::mul(Expr::powi(x.clone(), 2), u.clone());
        let d = total_derivative(&sp, &e, BaseSlot::Indep(1)).unwrap();
        let expect = Expr::add(
            Expr::prod(vec![Expr::int(2), x.clone(), u.clone()]),
            Expr::mul(
                Expr::powi(x.clone(), 2),
                Expr::jet(JetCoord { var: psi, orders: vec![0, 1] }),
            ),
        );
        assert!(crate::expr::semantically_equal(&d, &expect).unwrap());
    }

    #[test]
    fn partial_ignores_jet_structure() {
        let sp = JetSpace::schrodinger(1);
        let psi = sp.dep_id("psi").unwrap();
        let u = Expr::jet(sp.jet0(psi));
        let ux = Expr::jet(JetCoord { var: psi, orders: vec![0, 1] });
        let e = Expr::mul(u.clone(), ux.clone());
        // partial w.r.t. psi sees psi_x as an unrelated symbol
        let d = partial(&e, &PartialVar::Jet(sp.jet0(psi))).unwrap();
        assert!(crate::expr::semantically_equal(&d, &ux).unwrap());
    }

    #[test]
    fn exp_and_power_derivatives() {
        let mut sp = JetSpace::schrodinger(1);
        sp.add_const("k", true);
        let k = sp.const_id("k").unwrap();
        let x = Expr::indep(1);
        // d/dx exp(x^2) = 2x exp(x^2)
        let e = Expr::exp(Expr::powi(x.clone(), 2));
        let d = total_derivative(&sp, &e, BaseSlot::Indep(1)).unwrap();
        let expect = Expr::prod(vec![Expr::int(2), x.clone(), e.clone()]);
        assert!(crate::expr::semantically_equal(&d, &expect).unwrap());
        // d/dx x^k = k x^(k-1); d/dk x^k is refused (logarithm)
        let p = Expr::powq(x.clone(), crate::expr::QExp::sym(k, false));
        let dp = total_derivative(&sp, &p, BaseSlot::Indep(1)).unwrap();
        let mut km1 = crate::expr::QExp::sym(k, false);
        km1.rat -= num_rational::BigRational::from_integer(1.into());
        let expect = Expr::mul(Expr::cnst(k), Expr::powq(x.clone(), km1));
        assert!(crate::expr::semantically_equal(&dp, &expect).unwrap());
        assert!(partial(&p, &PartialVar::Const { id: k, conj: false }).is_err());
    }

    #[test]
    fn fibered_chain_rule() {
        // W over (t, x, psi, cpsi): D_x W = W_x + psi_x W_psi + cpsi_x W_cpsi
        let mut sp = JetSpace::schrodinger(1);
        let psi = sp.dep_id("psi").unwrap();
        let cpsi = sp.dep_id("cpsi").unwrap();
        let base = vec![
            BaseSlot::Indep(0),
            BaseSlot::Indep(1),
            BaseSlot::Dep(psi),
            BaseSlot::Dep(cpsi),
        ];
        let v = sp.add_dep_fibered("V", base, DepConj::Real);
        let w = Expr::jet(sp.jet0(v));
        let d = total_derivative(&sp, &w, BaseSlot::Indep(1)).unwrap();
        let jet = |var: usize, orders: Vec<u32>| Expr::jet(JetCoord { var, orders });
        let expect = Expr::sum(vec![
            jet(v, vec![0, 1, 0, 0]),
            Expr::mul(jet(psi, vec![0, 1]), jet(v, vec![0, 0, 1, 0])),
            Expr::mul(jet(cpsi, vec![0, 1]), jet(v, vec![0, 0, 0, 1])),
        ]);
        assert!(crate::expr::semantically_equal(&d, &expect).unwrap());
        // Fiber-direction derivative picks out the fiber jet.
        let dpsi = total_derivative(&sp, &w, BaseSlot::Dep(psi)).unwrap();
        assert!(
            crate::expr::semantically_equal(&dpsi, &jet(v, vec![0, 0, 1, 0])).unwrap()
        );
    }
}
