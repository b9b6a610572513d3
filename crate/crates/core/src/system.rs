//! Equation systems in residual form, with solved leading jets and
//! reduction of expressions to normal form modulo the system.
//!
//! Each equation is a residual together with one jet coordinate the
//! residual is solved for. The solved forms become substitution rules (jet
//! rules automatically cover all higher coordinates of the solved jet), and
//! `reduce` iterates the simultaneous substitution until nothing changes.
//! The iteration is bounded by `10 * (max jet order) * (equation count)`
//! rounds; exhausting the bound is reported rather than looping.

use crate::expr::{conj, diff, parse, subst, Expr};
use crate::space::{JetCoord, JetSpace};
use crate::{Error, Result};

/// One equation: a residual, the jet it is solved for, and the solution.
#[derive(Clone, Debug)]
pub struct Equation {
    pub residual: Expr,
    pub solved: JetCoord,
    pub rhs: Expr,
}

/// A named system of equations sharing one jet space.
#[derive(Clone, Debug)]
pub struct EquationSystem {
    pub name: String,
    pub eqs: Vec<Equation>,
    rules: Vec<subst::Rule>,
}

/// Solve a residual for one jet coordinate. The residual must be linear in
/// the jet with a coefficient free of it.
pub fn solve_for(sp: &JetSpace, residual: &Expr, jet: &JetCoord) -> Result<Expr> {
    let v = diff::PartialVar::Jet(jet.clone());
    let c = diff::partial(residual, &v)?.canonicalize()?;
    if c.is_zero() {
        return Err(Error::BadKey(format!(
            "residual does not contain {}",
            sp.jet_name(jet)
        )));
    }
    if !diff::partial(&c, &v)?.canonicalize()?.is_zero() {
        return Err(Error::BadKey(format!(
            "residual is not linear in {}",
            sp.jet_name(jet)
        )));
    }
    let rest = Expr::sub(residual.clone(), Expr::mul(c.clone(), Expr::jet(jet.clone())));
    Expr::div(Expr::neg(rest), c).canonicalize()
}

impl EquationSystem {
    /// Build a system from (residual, solved jet) pairs. With `adjoin_conj`
    /// the conjugate of every pair is added too (duplicates collapse, so
    /// self-conjugate equations stay single).
    pub fn new(
        sp: &JetSpace,
        name: impl Into<String>,
        pairs: Vec<(Expr, JetCoord)>,
        adjoin_conj: bool,
    ) -> Result<EquationSystem> {
        let mut canon_pairs: Vec<(Expr, JetCoord)> = Vec::new();
        let push = |r: Expr, j: JetCoord, out: &mut Vec<(Expr, JetCoord)>| -> Result<()> {
            let r = r.canonicalize()?;
            if r.is_zero() {
                return Err(Error::BadKey("zero residual in equation system".into()));
            }
            if !out.iter().any(|(pr, pj)| pr == &r && pj == &j) {
                out.push((r, j));
            }
            Ok(())
        };
        for (r, j) in pairs {
            sp.check_jet(&j)?;
            if adjoin_conj {
                let rc = conj::conj(sp, &r);
                let jc = conj::conj_jet(sp, &j);
                push(r, j, &mut canon_pairs)?;
                push(rc, jc, &mut canon_pairs)?;
            } else {
                push(r, j, &mut canon_pairs)?;
            }
        }
        let mut eqs = Vec::with_capacity(canon_pairs.len());
        let mut rules = Vec::with_capacity(canon_pairs.len());
        for (residual, solved) in canon_pairs {
            let rhs = solve_for(sp, &residual, &solved)?;
            rules.push(subst::Rule::new(
                subst::Target::Jet(solved.clone()),
                rhs.clone(),
            ));
            eqs.push(Equation { residual, solved, rhs });
        }
        subst::validate(sp, &rules)?;
        let sys = EquationSystem { name: name.into(), eqs, rules };
        // Self-consistency: each residual must vanish modulo the system.
        for eq in &sys.eqs {
            let r = sys.reduce(sp, &eq.residual)?;
            if !r.is_zero() {
                return Err(Error::BadKey(format!(
                    "system {} is inconsistent: a residual reduces to {}",
                    sys.name,
                    crate::expr::print::print(sp, &r)
                )));
            }
        }
        Ok(sys)
    }

    /// Parse `residual` and `solved` from source text and build a
    /// single-equation system.
    pub fn from_dsl(
        sp: &JetSpace,
        name: impl Into<String>,
        residual: &str,
        solved: &str,
        adjoin_conj: bool,
    ) -> Result<EquationSystem> {
        let r = parse::parse(sp, residual)?;
        let j = sp
            .resolve_jet_ident(solved)
            .ok_or_else(|| Error::UnknownIdent(solved.to_string()))?;
        sp.check_jet(&j)?;
        EquationSystem::new(sp, name, vec![(r, j)], adjoin_conj)
    }

    pub fn rules(&self) -> &[subst::Rule] {
        &self.rules
    }

    /// Highest jet order across the residuals.
    pub fn order(&self) -> u32 {
        self.eqs
            .iter()
            .map(|e| e.residual.max_jet_order())
            .max()
            .unwrap_or(0)
    }

    /// Reduce an expression to normal form modulo the solved equations.
    pub fn reduce(&self, sp: &JetSpace, e: &Expr) -> Result<Expr> {
        let bound = 10
            * (e.max_jet_order().max(1) as usize)
            * self.eqs.len().max(1);
        self.reduce_bounded(sp, e, bound)
    }

    fn reduce_bounded(&self, sp: &JetSpace, e: &Expr, bound: usize) -> Result<Expr> {
        let mut cur = e.canonicalize()?;
        for _ in 0..bound {
            let next = subst::substitute(sp, &cur, &self.rules)?.canonicalize()?;
            if next == cur {
                return Ok(cur);
            }
            cur = next;
        }
        Err(Error::FixpointNotReached(
            "reduction modulo the equation system".into(),
        ))
    }

    #[cfg(test)]
    pub(crate) fn reduce_with_bound(
        &self,
        sp: &JetSpace,
        e: &Expr,
        bound: usize,
    ) -> Result<Expr> {
        self.reduce_bounded(sp, e, bound)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse::parse;
    use crate::space::{BaseSlot, DepConj};

    fn schrod(n: usize) -> (JetSpace, EquationSystem) {
        let sp = JetSpace::schrodinger(n);
        let lap: Vec<String> = (1..=n).map(|a| format!("psi_x{a}x{a}")).collect();
        let res = format!("i*psi_t + {} + W*psi", lap.join(" + "));
        let sys = EquationSystem::from_dsl(&sp, "free", &res, "psi_t", true).unwrap();
        (sp, sys)
    }

    #[test]
    fn conjugate_pair_is_adjoined_and_solved() {
        let (sp, sys) = schrod(1);
        assert_eq!(sys.eqs.len(), 2);
        let rhs = parse(&sp, "i*(psi_x1x1 + W*psi)").unwrap();
        assert_eq!(sys.eqs[0].rhs, rhs);
        let crhs = parse(&sp, "-i*(cpsi_x1x1 + W*cpsi)").unwrap();
        assert_eq!(sys.eqs[1].rhs, crhs);
        assert_eq!(sp.jet_name(&sys.eqs[1].solved), "cpsi_t");
    }

    #[test]
    fn total_derivatives_of_residuals_reduce_to_zero() {
        let (sp, sys) = schrod(2);
        for eq in &sys.eqs {
            for slot in [BaseSlot::Indep(0), BaseSlot::Indep(1)] {
                let de = diff::total_derivative(&sp, &eq.residual, slot).unwrap();
                let red = sys.reduce(&sp, &de).unwrap();
                assert!(red.is_zero(), "reduced to {:?}", red);
            }
        }
    }

    #[test]
    fn reduction_leaves_unrelated_jets_alone() {
        let (sp, sys) = schrod(1);
        let e = parse(&sp, "W_t + psi_x1*cpsi_x1").unwrap();
        assert_eq!(sys.reduce(&sp, &e).unwrap(), e);
    }

    #[test]
    fn mixed_derivatives_reduce_through_extensions() {
        // A second-order solved form without eliminating psi_t: reducing a
        // third-order mixed jet needs the derivative extension of the rule.
        let mut sp = JetSpace::new(1, 8);
        sp.add_dep("psi", DepConj::Real);
        sp.add_dep("V", DepConj::Real);
        let sys = EquationSystem::from_dsl(
            &sp,
            "second-order",
            "i*psi_t + psi_x1x1 - V",
            "psi_x1x1",
            false,
        )
        .unwrap();
        let e = parse(&sp, "D(psi_x1x1; t)").unwrap();
        let red = sys.reduce(&sp, &e).unwrap();
        assert_eq!(red, parse(&sp, "V_t - i*psi_tt").unwrap());
        // An exhausted round bound is an error, not a hang.
        let err = sys.reduce_with_bound(&sp, &e, 1).unwrap_err();
        assert!(matches!(err, Error::FixpointNotReached(_)));
    }

    #[test]
    fn unsolvable_forms_are_rejected() {
        let sp = JetSpace::schrodinger(1);
        // Not present at all.
        let err =
            EquationSystem::from_dsl(&sp, "bad", "psi_x1x1 + W*psi", "psi_t", false).unwrap_err();
        assert!(matches!(err, Error::BadKey(_)));
        // Present but quadratic.
        let err = EquationSystem::from_dsl(&sp, "bad", "psi_t^2 + W", "psi_t", false).unwrap_err();
        assert!(matches!(err, Error::BadKey(_)));
    }
}
