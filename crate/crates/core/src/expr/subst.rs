//! Simultaneous substitution and function-symbol binding.
//!
//! Substitution is one-pass: every matching occurrence in the input is
//! replaced, and replacements are not rescanned. A rule whose target is a
//! jet coordinate also applies to every higher coordinate of the same
//! variable: the occurrence `u_J` with rule `u_K -> r` (componentwise
//! `J >= K`) is replaced by the iterated total derivative `D^(J-K) r`. When
//! several jet rules apply, the most specific one (largest total order,
//! then lexicographically largest order vector) wins.
//!
//! Rule sets are validated up front: a rule may mention its own target
//! exactly (scaling maps like `W -> W * exp(-2*lambda)` are fine), but a
//! right-hand side containing a proper extension of its own target, or any
//! cross-rule reachability cycle, is rejected — iterating such a set would
//! never settle.

use crate::space::{BaseSlot, JetCoord, JetSpace};
use crate::{Error, Result};

use super::{conj, diff, Expr, Node};

/// What a substitution rule replaces.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Target {
    Indep(usize),
    Jet(JetCoord),
    Const { id: usize, conj: bool },
}

/// One substitution rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub target: Target,
    pub rhs: Expr,
}

impl Rule {
    pub fn new(target: Target, rhs: Expr) -> Rule {
        Rule { target, rhs }
    }
}

/// Does `e` contain an occurrence that `target` would replace? For jet
/// targets this includes proper extensions; `proper_only` restricts to them.
fn mentions(e: &Expr, target: &Target, proper_only: bool) -> bool {
    let mut found = false;
    e.walk(&mut |sub: &Expr| match (sub.node(), target) {
        (Node::Indep(i), Target::Indep(j)) if i == j && !proper_only => found = true,
        (Node::Const { id, conj }, Target::Const { id: tid, conj: tconj })
            if id == tid && conj == tconj && !proper_only =>
        {
            found = true;
        }
        (Node::Jet(j), Target::Jet(k)) if j.var == k.var => {
            if let Some(diff) = j.extension_from(k) {
                let proper = diff.iter().any(|d| *d > 0);
                if proper || !proper_only {
                    found = true;
                }
            }
        }
        _ => {}
    });
    found
}

/// Validate a rule set: no proper self-extension, no cross-rule cycles.
pub fn validate(sp: &JetSpace, rules: &[Rule]) -> Result<()> {
    let describe = |t: &Target| -> String {
        match t {
            Target::Indep(i) => sp.indeps[*i].clone(),
            Target::Jet(j) => sp.jet_name(j),
            Target::Const { id, conj } => {
                let n = &sp.consts[*id].name;
                if *conj { format!("conj({})", n) } else { n.clone() }
            }
        }
    };
    let m = rules.len();
    let mut edges: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, ri) in rules.iter().enumerate() {
        if mentions(&ri.rhs, &ri.target, true) {
            return Err(Error::SubstitutionCycle(format!(
                "rule for {} extends its own target on the right-hand side",
                describe(&ri.target)
            )));
        }
        for (j, rj) in rules.iter().enumerate() {
            if i != j && mentions(&ri.rhs, &rj.target, false) {
                edges[i].push(j);
            }
        }
    }
    // Depth-first cycle check over the cross-rule edges.
    let mut state = vec![0u8; m]; // 0 new, 1 on stack, 2 done
    fn dfs(v: usize, edges: &[Vec<usize>], state: &mut [u8]) -> Option<usize> {
        state[v] = 1;
        for &w in &edges[v] {
            match state[w] {
                1 => return Some(w),
                0 => {
                    if let Some(c) = dfs(w, edges, state) {
                        return Some(c);
                    }
                }
                _ => {}
            }
        }
        state[v] = 2;
        None
    }
    for v in 0..m {
        if state[v] == 0 {
            if let Some(c) = dfs(v, &edges, &mut state) {
                return Err(Error::SubstitutionCycle(format!(
                    "rules form a cycle through {}",
                    describe(&rules[c].target)
                )));
            }
        }
    }
    Ok(())
}

/// The most specific jet rule applying to `j`, if any.
fn best_jet_rule<'r>(rules: &'r [Rule], j: &JetCoord) -> Option<(&'r Rule, Vec<u32>)> {
    let mut best: Option<(&Rule, &JetCoord, Vec<u32>)> = None;
    for r in rules {
        if let Target::Jet(k) = &r.target {
            if k.var != j.var {
                continue;
            }
            if let Some(ext) = j.extension_from(k) {
                let better = match &best {
                    None => true,
                    Some((_, kb, _)) => {
                        (k.order(), &k.orders) > (kb.order(), &kb.orders)
                    }
                };
                if better {
                    best = Some((r, k, ext));
                }
            }
        }
    }
    best.map(|(r, _, ext)| (r, ext))
}

fn apply(sp: &JetSpace, e: &Expr, rules: &[Rule]) -> Result<Expr> {
    match e.node() {
        Node::Num(_) => Ok(e.clone()),
        Node::Indep(i) => {
            for r in rules {
                if r.target == Target::Indep(*i) {
                    return Ok(r.rhs.clone());
                }
            }
            Ok(e.clone())
        }
        Node::Const { id, conj: flag } => {
            for r in rules {
                if let Target::Const { id: tid, conj: tflag } = &r.target {
                    if tid == id {
                        if tflag == flag {
                            return Ok(r.rhs.clone());
                        }
                        // Rule given for the plain constant also binds the
                        // conjugated occurrence, conjugating the replacement.
                        if !*tflag && *flag {
                            return Ok(conj::conj(sp, &r.rhs));
                        }
                    }
                }
            }
            Ok(e.clone())
        }
        Node::Jet(j) => {
            if let Some((r, ext)) = best_jet_rule(rules, j) {
                let base = &sp.deps[j.var].base;
                return diff::total_derivative_multi(sp, &r.rhs, base, &ext);
            }
            Ok(e.clone())
        }
        Node::Func { id, orders, args, conj: flag } => {
            let mut new_args = Vec::with_capacity(args.len());
            for a in args {
                new_args.push(apply(sp, a, rules)?);
            }
            Ok(Expr::func_flag(*id, orders.clone(), new_args, *flag))
        }
        Node::Sum(xs) => {
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                out.push(apply(sp, x, rules)?);
            }
            Ok(Expr::sum(out))
        }
        Node::Prod(xs) => {
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                out.push(apply(sp, x, rules)?);
            }
            Ok(Expr::prod(out))
        }
        Node::Pow(b, q) => Ok(Expr::powq(apply(sp, b, rules)?, q.clone())),
        Node::Exp(u) => Ok(Expr::exp(apply(sp, u, rules)?)),
    }
}

/// One-pass simultaneous substitution.
pub fn substitute(sp: &JetSpace, e: &Expr, rules: &[Rule]) -> Result<Expr> {
    validate(sp, rules)?;
    apply(sp, e, rules)
}

/// Replace a function symbol by an explicit body. `params[s]` is the opaque
/// constant standing for the function's s-th argument slot inside `body`.
/// An occurrence with derivative orders is replaced by the matching partial
/// derivative of the body with the arguments substituted back in; flagged
/// (conjugated) occurrences use the conjugated body.
pub fn bind_function(
    sp: &JetSpace,
    e: &Expr,
    func: usize,
    params: &[usize],
    body: &Expr,
) -> Result<Expr> {
    assert_eq!(params.len(), sp.funcs[func].arity, "parameter count mismatch");
    let rebuilt = match e.node() {
        Node::Func { id, orders, args, conj: flag } if *id == func => {
            let mut d = body.clone();
            for (s, k) in orders.iter().enumerate() {
                let v = diff::PartialVar::Const { id: params[s], conj: false };
                for _ in 0..*k {
                    d = diff::partial(&d, &v)?.canonicalize()?;
                }
            }
            if *flag {
                d = conj::conj(sp, &d);
            }
            let mut rules = Vec::with_capacity(args.len());
            for (s, a) in args.iter().enumerate() {
                let bound = bind_function(sp, a, func, params, body)?;
                rules.push(Rule::new(
                    Target::Const { id: params[s], conj: false },
                    bound,
                ));
            }
            return substitute(sp, &d, &rules);
        }
        Node::Func { id, orders, args, conj: flag } => {
            let mut new_args = Vec::with_capacity(args.len());
            for a in args {
                new_args.push(bind_function(sp, a, func, params, body)?);
            }
            Expr::func_flag(*id, orders.clone(), new_args, *flag)
        }
        Node::Sum(xs) => {
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                out.push(bind_function(sp, x, func, params, body)?);
            }
            Expr::sum(out)
        }
        Node::Prod(xs) => {
            let mut out = Vec::with_capacity(xs.len());
            for x in xs {
                out.push(bind_function(sp, x, func, params, body)?);
            }
            Expr::prod(out)
        }
        Node::Pow(b, q) => Expr::powq(bind_function(sp, b, func, params, body)?, q.clone()),
        Node::Exp(u) => Expr::exp(bind_function(sp, u, func, params, body)?),
        _ => e.clone(),
    };
    Ok(rebuilt)
}

/// Total-derivative slots helper used by callers that substitute along
/// plain independent directions only.
pub fn indep_base(n: usize) -> Vec<BaseSlot> {
    (0..=n).map(BaseSlot::Indep).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp() -> JetSpace {
        let mut sp = JetSpace::schrodinger(1);
        sp.add_const("lambda", true);
        sp.add_func("B", 1);
        sp
    }

    #[test]
    fn jet_rules_extend_to_higher_coordinates() {
        let s = sp();
        let psi = s.dep_id("psi").unwrap();
        let x = Expr::indep(1);
        let t = Expr::indep(0);
        // psi -> t*x^2, so psi_x -> 2tx and psi_tx -> 2x
        let rules = vec![Rule::new(
            Target::Jet(s.jet0(psi)),
            Expr::mul(t.clone(), Expr::powi(x.clone(), 2)),
        )];
        let occ = Expr::jet(JetCoord { var: psi, orders: vec![1, 1] });
        let got = substitute(&s, &occ, &rules).unwrap();
        let expect = Expr::mul(Expr::int(2), x.clone());
        assert!(crate::expr::semantically_equal(&got, &expect).unwrap());
    }

    #[test]
    fn most_specific_rule_wins() {
        let s = sp();
        let psi = s.dep_id("psi").unwrap();
        let rules = vec![
            Rule::new(Target::Jet(s.jet0(psi)), Expr::indep(1)),
            Rule::new(
                Target::Jet(JetCoord { var: psi, orders: vec![1, 0] }),
                Expr::int(7),
            ),
        ];
        // psi_tx matches both psi (extension t,x) and psi_t (extension x);
        // the deeper key wins, and D_x 7 = 0.
        let occ = Expr::jet(JetCoord { var: psi, orders: vec![1, 1] });
        let got = substitute(&s, &occ, &rules).unwrap();
        assert!(got.canonicalize().unwrap().is_zero());
    }

    #[test]
    fn exact_self_mention_is_allowed_proper_extension_is_not() {
        let s = sp();
        let w = s.dep_id("W").unwrap();
        let lam = s.const_id("lambda").unwrap();
        let scaling = vec![Rule::new(
            Target::Jet(s.jet0(w)),
            Expr::mul(
                Expr::jet(s.jet0(w)),
                Expr::exp(Expr::prod(vec![Expr::int(-2), Expr::cnst(lam)])),
            ),
        )];
        assert!(substitute(&s, &Expr::jet(s.jet0(w)), &scaling).is_ok());
        let bad = vec![Rule::new(
            Target::Jet(s.jet0(w)),
            Expr::jet(JetCoord { var: w, orders: vec![0, 1] }),
        )];
        assert!(matches!(
            substitute(&s, &Expr::one(), &bad),
            Err(Error::SubstitutionCycle(_))
        ));
    }

    #[test]
    fn cross_rule_cycles_are_rejected() {
        let s = sp();
        let rules = vec![
            Rule::new(Target::Indep(0), Expr::indep(1)),
            Rule::new(Target::Indep(1), Expr::indep(0)),
        ];
        assert!(matches!(
            substitute(&s, &Expr::indep(0), &rules),
            Err(Error::SubstitutionCycle(_))
        ));
    }

    #[test]
    fn binding_a_function_symbol() {
        let mut s = sp();
        s.add_const("s1", true);
        let b = s.func_id("B").unwrap();
        let s1 = s.const_id("s1").unwrap();
        let t = Expr::indep(0);
        // B(t) with body s1^3: B'(t) -> 3 t^2
        let occ = Expr::func(b, vec![1], vec![t.clone()]);
        let body = Expr::powi(Expr::cnst(s1), 3);
        let got = bind_function(&s, &occ, b, &[s1], &body).unwrap();
        let expect = Expr::mul(Expr::int(3), Expr::powi(t.clone(), 2));
        assert!(crate::expr::semantically_equal(&got, &expect).unwrap());
    }
}
