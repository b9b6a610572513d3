//! Complex conjugation, driven by the declarations on the jet space.
//!
//! Independent variables are real. Dependent variables and function symbols
//! carry their own conjugation behavior: real (fixed), real with a base
//! permutation (real-valued fields over a partly complex base), or paired
//! with a partner symbol. Opaque constants and opaque function symbols track
//! conjugation with a flag, so `conj` is always total and an involution.

use crate::space::{DepConj, FuncConj, JetCoord, JetSpace};

use super::{Expr, Node, QExp};

fn conj_qexp(sp: &JetSpace, q: &QExp) -> QExp {
    let mut out = QExp { rat: q.rat.clone(), syms: Default::default() };
    for ((id, flag), coeff) in &q.syms {
        let key = if sp.consts[*id].real { (*id, false) } else { (*id, !*flag) };
        out.syms.insert(key, coeff.clone());
    }
    out
}

fn permuted(orders: &[u32], perm: &[usize]) -> Vec<u32> {
    (0..orders.len()).map(|i| orders[perm[i]]).collect()
}

/// Complex conjugate of an expression.
pub fn conj(sp: &JetSpace, e: &Expr) -> Expr {
    match e.node() {
        Node::Num(c) => Expr::num(c.conj()),
        Node::Indep(i) => Expr::indep(*i),
        Node::Jet(j) => Expr::jet(conj_jet(sp, j)),
        Node::Const { id, conj: flag } => {
            if sp.consts[*id].real {
                Expr::cnst(*id)
            } else {
                Expr::cnst_flag(*id, !*flag)
            }
        }
        Node::Func { id, orders, args, conj: flag } => {
            let cargs: Vec<Expr> = args.iter().map(|a| conj(sp, a)).collect();
            match &sp.funcs[*id].conj {
                FuncConj::RealSwap(perm) => {
                    let pargs: Vec<Expr> = perm.iter().map(|&i| cargs[i].clone()).collect();
                    Expr::func_flag(*id, permuted(orders, perm), pargs, *flag)
                }
                FuncConj::Pair(partner, perm) => {
                    let pargs: Vec<Expr> = perm.iter().map(|&i| cargs[i].clone()).collect();
                    Expr::func_flag(*partner, permuted(orders, perm), pargs, *flag)
                }
                FuncConj::Opaque => Expr::func_flag(*id, orders.clone(), cargs, !*flag),
            }
        }
        Node::Sum(xs) => Expr::sum(xs.iter().map(|x| conj(sp, x)).collect()),
        Node::Prod(xs) => Expr::prod(xs.iter().map(|x| conj(sp, x)).collect()),
        Node::Pow(b, q) => Expr::powq(conj(sp, b), conj_qexp(sp, q)),
        Node::Exp(u) => Expr::exp(conj(sp, u)),
    }
}

/// Conjugate of a jet coordinate per its variable's declaration.
pub fn conj_jet(sp: &JetSpace, j: &JetCoord) -> JetCoord {
    match &sp.deps[j.var].conj {
        DepConj::Real => j.clone(),
        DepConj::RealSwap(perm) => JetCoord {
            var: j.var,
            orders: permuted(&j.orders, perm),
        },
        DepConj::Pair(partner, perm) => JetCoord {
            var: *partner,
            orders: permuted(&j.orders, perm),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::BaseSlot;

    #[test]
    fn involution_on_mixed_expression() {
        let mut sp = JetSpace::schrodinger(2);
        sp.add_const("beta", true);
        sp.add_const("C", false);
        sp.add_func("U1", 1);
        let psi = sp.dep_id("psi").unwrap();
        let c = sp.const_id("C").unwrap();
        let e = Expr::sum(vec![
            Expr::mul(Expr::i(), Expr::jet(JetCoord { var: psi, orders: vec![1, 0, 0] })),
            Expr::mul(Expr::cnst(c), Expr::exp(Expr::mul(Expr::i(), Expr::indep(1)))),
            Expr::func(sp.func_id("U1").unwrap(), vec![2], vec![Expr::indep(0)]),
        ]);
        let cc = conj(&sp, &conj(&sp, &e));
        assert_eq!(
            cc.canonicalize().unwrap(),
            e.canonicalize().unwrap()
        );
    }

    #[test]
    fn pair_and_realswap_jets() {
        let mut sp = JetSpace::schrodinger(1);
        let psi = sp.dep_id("psi").unwrap();
        let cpsi = sp.dep_id("cpsi").unwrap();
        let jx = JetCoord { var: psi, orders: vec![0, 1] };
        assert_eq!(conj_jet(&sp, &jx), JetCoord { var: cpsi, orders: vec![0, 1] });
        // Real field over a fibered base: conjugation swaps the fiber slots.
        let base = vec![
            BaseSlot::Indep(0),
            BaseSlot::Indep(1),
            BaseSlot::Dep(psi),
            BaseSlot::Dep(cpsi),
        ];
        let w = sp.add_dep_fibered("Q", base, DepConj::RealSwap(vec![0, 1, 3, 2]));
        let wpsi = JetCoord { var: w, orders: vec![0, 0, 1, 0] };
        assert_eq!(conj_jet(&sp, &wpsi), JetCoord { var: w, orders: vec![0, 0, 0, 1] });
    }

    #[test]
    fn real_function_of_time_is_fixed() {
        let mut sp = JetSpace::schrodinger(1);
        sp.add_func("A", 1);
        let a = sp.func_id("A").unwrap();
        let e = Expr::func(a, vec![3], vec![Expr::indep(0)]);
        assert_eq!(conj(&sp, &e), e);
    }

    #[test]
    fn conjugation_flips_i() {
        let sp = JetSpace::schrodinger(1);
        let e = Expr::mul(Expr::i(), Expr::indep(0));
        let c = conj(&sp, &e);
        assert!(
            Expr::add(e, c).canonicalize().unwrap().is_zero(),
            "i*t + conj(i*t) should vanish"
        );
    }
}
