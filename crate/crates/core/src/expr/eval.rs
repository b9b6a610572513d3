//! Floating-point evaluation.
//!
//! Exact coefficients convert to `f64` pairs only here. Bindings map
//! independent variables, jet coordinates, and constants to complex doubles,
//! and function symbols to callable samples receiving derivative orders and
//! argument values. Conjugated occurrences evaluate to the conjugate of the
//! plain binding. Powers use the principal branch; a base smaller than
//! 1e-300 in magnitude under a negative exponent reports a pole.

use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64;
use num_traits::ToPrimitive;

use crate::space::{JetCoord, JetSpace};
use crate::{Error, Result};

use super::{Expr, Node, QExp};

/// Callable sample for a function symbol: derivative orders, argument values.
pub type FuncSample = Arc<dyn Fn(&[u32], &[Complex64]) -> Option<Complex64> + Send + Sync>;

/// Value assignment for numeric evaluation.
pub struct Bindings<'a> {
    sp: &'a JetSpace,
    indeps: Vec<Option<Complex64>>,
    jets: BTreeMap<JetCoord, Complex64>,
    consts: Vec<Option<Complex64>>,
    funcs: Vec<Option<FuncSample>>,
}

impl<'a> Bindings<'a> {
    pub fn new(sp: &'a JetSpace) -> Bindings<'a> {
        Bindings {
            sp,
            indeps: vec![None; sp.indeps.len()],
            jets: BTreeMap::new(),
            consts: vec![None; sp.consts.len()],
            funcs: vec![None; sp.funcs.len()],
        }
    }

    pub fn indep(mut self, name: &str, v: impl Into<Complex64>) -> Bindings<'a> {
        let id = self.sp.indep_id(name).expect("independent variable name");
        self.indeps[id] = Some(v.into());
        self
    }

    pub fn set_indep(&mut self, id: usize, v: Complex64) {
        self.indeps[id] = Some(v);
    }

    pub fn jet(mut self, j: JetCoord, v: impl Into<Complex64>) -> Bindings<'a> {
        self.jets.insert(j, v.into());
        self
    }

    pub fn set_jet(&mut self, j: JetCoord, v: Complex64) {
        self.jets.insert(j, v);
    }

    pub fn constant(mut self, name: &str, v: impl Into<Complex64>) -> Bindings<'a> {
        let id = self.sp.const_id(name).expect("constant name");
        self.consts[id] = Some(v.into());
        self
    }

    pub fn set_const(&mut self, id: usize, v: Complex64) {
        self.consts[id] = Some(v);
    }

    pub fn func(mut self, name: &str, f: FuncSample) -> Bindings<'a> {
        let id = self.sp.func_id(name).expect("function name");
        self.funcs[id] = Some(f);
        self
    }

    fn qexp_value(&self, q: &QExp) -> Result<Complex64> {
        let mut v = Complex64::new(
            q.rat.to_f64().ok_or_else(|| Error::BadExponent("exponent overflow".into()))?,
            0.0,
        );
        for ((id, conj), coeff) in &q.syms {
            let c = self.consts[*id].ok_or_else(|| {
                Error::Unbound(self.sp.consts[*id].name.clone())
            })?;
            let c = if *conj { c.conj() } else { c };
            let k = coeff
                .to_f64()
                .ok_or_else(|| Error::BadExponent("exponent overflow".into()))?;
            v += k * c;
        }
        Ok(v)
    }

    /// Evaluate an expression under these bindings.
    pub fn eval(&self, e: &Expr) -> Result<Complex64> {
        match e.node() {
            Node::Num(c) => {
                let (re, im) = c.to_f64_parts();
                Ok(Complex64::new(re, im))
            }
            Node::Indep(i) => self.indeps[*i]
                .ok_or_else(|| Error::Unbound(self.sp.indeps[*i].clone())),
            Node::Jet(j) => self
                .jets
                .get(j)
                .copied()
                .ok_or_else(|| Error::Unbound(self.sp.jet_name(j))),
            Node::Const { id, conj } => {
                let v = self.consts[*id]
                    .ok_or_else(|| Error::Unbound(self.sp.consts[*id].name.clone()))?;
                Ok(if *conj { v.conj() } else { v })
            }
            Node::Func { id, orders, args, conj } => {
                let f = self.funcs[*id]
                    .as_ref()
                    .ok_or_else(|| Error::Unbound(self.sp.funcs[*id].name.clone()))?;
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    let v = self.eval(a)?;
                    vals.push(if *conj { v.conj() } else { v });
                }
                let out = f(orders, &vals).ok_or_else(|| {
                    Error::Unbound(format!(
                        "derivative sample of {}",
                        self.sp.funcs[*id].name
                    ))
                })?;
                Ok(if *conj { out.conj() } else { out })
            }
            Node::Sum(xs) => {
                let mut acc = Complex64::new(0.0, 0.0);
                for x in xs {
                    acc += self.eval(x)?;
                }
                Ok(acc)
            }
            Node::Prod(xs) => {
                let mut acc = Complex64::new(1.0, 0.0);
                for x in xs {
                    acc *= self.eval(x)?;
                }
                Ok(acc)
            }
            Node::Pow(b, q) => {
                let bv = self.eval(b)?;
                let qv = self.qexp_value(q)?;
                if bv.norm() < 1e-300 && qv.re < 0.0 {
                    return Err(Error::Pole(format!(
                        "power base within 1e-300 of zero under exponent {}",
                        qv.re
                    )));
                }
                // Integer exponents take the exact route (works for negative
                // reals where the principal branch would leave the axis).
                if qv.im == 0.0 && qv.re.fract() == 0.0 && qv.re.abs() <= 64.0 {
                    return Ok(bv.powi(qv.re as i32));
                }
                Ok(bv.powc(qv))
            }
            Node::Exp(u) => Ok(self.eval(u)?.exp()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse;
    use super::super::subst::{substitute, Rule, Target};
    use super::*;

    #[test]
    fn plain_arithmetic() {
        let sp = JetSpace::schrodinger(2);
        let e = parse(&sp, "x1^2").unwrap();
        let b = Bindings::new(&sp).indep("x1", 3.0);
        assert_eq!(b.eval(&e).unwrap(), Complex64::new(9.0, 0.0));
        let p = parse(&sp, "1/(x1^2 + x2^2)").unwrap();
        let b = Bindings::new(&sp).indep("x1", 1.0).indep("x2", 2.0);
        assert!((b.eval(&p).unwrap() - Complex64::new(0.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn plane_wave_annihilates_free_residual() {
        let mut sp = JetSpace::schrodinger(1);
        sp.add_const("kw", true);
        let psi = sp.dep_id("psi").unwrap();
        // psi = exp(i*(kw*x - kw^2*t)), W = 0
        let wave = parse(&sp, "exp(i*(kw*x1 - kw^2*t))").unwrap();
        let residual = parse(&sp, "i*psi_t + psi_x1x1 + W*psi").unwrap();
        let w = sp.dep_id("W").unwrap();
        let bound = substitute(
            &sp,
            &residual,
            &[
                Rule::new(Target::Jet(sp.jet0(psi)), wave),
                Rule::new(Target::Jet(sp.jet0(w)), Expr::zero()),
            ],
        )
        .unwrap();
        let b = Bindings::new(&sp)
            .indep("t", 0.3)
            .indep("x1", 1.7)
            .constant("kw", 2.0);
        assert!(b.eval(&bound).unwrap().norm() <= 1e-12);
    }

    #[test]
    fn canonicalization_preserves_value() {
        let mut sp = JetSpace::schrodinger(2);
        sp.add_const("mu", true);
        let e = parse(
            &sp,
            "(x1 - t*mu)^2 + x2^2 - 2*x1*x2 + exp(mu*t)*exp(-mu*t)",
        )
        .unwrap();
        let raw = Expr::sum(vec![
            Expr::powi(
                Expr::sub(
                    Expr::indep(1),
                    Expr::mul(Expr::indep(0), Expr::cnst(sp.const_id("mu").unwrap())),
                ),
                2,
            ),
            Expr::powi(Expr::indep(2), 2),
            Expr::prod(vec![Expr::int(-2), Expr::indep(1), Expr::indep(2)]),
            Expr::one(),
        ]);
        let b = Bindings::new(&sp)
            .indep("t", Complex64::new(0.4, 0.0))
            .indep("x1", Complex64::new(-1.3, 0.0))
            .indep("x2", Complex64::new(2.2, 0.0))
            .constant("mu", Complex64::new(0.7, 0.0));
        let v1 = b.eval(&e).unwrap();
        let v2 = b.eval(&raw).unwrap();
        assert!((v1 - v2).norm() < 1e-10 * (1.0 + v2.norm()));
    }

    #[test]
    fn poles_and_unbound_symbols_error() {
        let sp = JetSpace::schrodinger(1);
        let e = parse(&sp, "1/x1").unwrap();
        let b = Bindings::new(&sp).indep("x1", 0.0);
        assert!(matches!(b.eval(&e), Err(Error::Pole(_))));
        let f = parse(&sp, "t + x1").unwrap();
        let b = Bindings::new(&sp).indep("x1", 1.0);
        assert!(matches!(b.eval(&f), Err(Error::Unbound(_))));
    }
}
