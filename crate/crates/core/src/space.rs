//! Variable declarations: independent variables, dependent variables with
//! their base (the coordinates they are differentiated along), opaque
//! constants, and arbitrary-function symbols.
//!
//! A dependent variable's base is usually the full list of independent
//! variables, but it may also contain other dependent variables: a potential
//! that is allowed to depend on the field itself is declared with base
//! `(t, x1..xn, psi, cpsi)`, and its jet coordinates then include derivatives
//! along the field slots. Total derivatives chain through such fibered bases.
//!
//! Conjugation is declarative: every dependent variable, constant, and
//! function symbol carries a rule saying what its complex conjugate is
//! (itself, itself with permuted argument slots, a paired partner symbol, or
//! an opaque marker).

use crate::{Error, Result};

/// One slot of a dependent variable's base.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub enum BaseSlot {
    Indep(usize),
    Dep(usize),
}

/// Conjugation behaviour of a dependent variable.
#[derive(Clone, Debug)]
pub enum DepConj {
    /// Real-valued; conjugation fixes the variable and every jet coordinate.
    Real,
    /// Real-valued, but conjugation permutes the base slots (a real function
    /// of a conjugate pair of arguments: the derivative orders swap).
    RealSwap(Vec<usize>),
    /// Conjugate is another declared variable; base slots permute.
    Pair(usize, Vec<usize>),
}

/// Conjugation behaviour of an arbitrary-function symbol.
#[derive(Clone, Debug)]
pub enum FuncConj {
    /// Real-valued function; conjugation permutes argument slots (identity
    /// permutation for ordinary real functions of real arguments).
    RealSwap(Vec<usize>),
    /// Conjugate is another declared function symbol, with slot permutation.
    Pair(usize, Vec<usize>),
    /// Conjugate has no simpler form; a conjugation flag is carried on the
    /// application node.
    Opaque,
}

#[derive(Clone, Debug)]
pub struct DepVar {
    pub name: String,
    pub base: Vec<BaseSlot>,
    pub conj: DepConj,
}

#[derive(Clone, Debug)]
pub struct ConstDecl {
    pub name: String,
    pub real: bool,
}

#[derive(Clone, Debug)]
pub struct FuncDecl {
    pub name: String,
    pub arity: usize,
    pub conj: FuncConj,
}

/// A derivative coordinate of a dependent variable: the variable id plus a
/// multi-index of derivative counts over its base slots. The multi-index is
/// the sole identity; mixed partials commute by construction.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct JetCoord {
    pub var: usize,
    pub orders: Vec<u32>,
}

impl JetCoord {
    /// Total derivative order.
    pub fn order(&self) -> u32 {
        self.orders.iter().sum()
    }

    /// The coordinate with one more derivative along `slot`.
    pub fn bump(&self, slot: usize) -> JetCoord {
        let mut orders = self.orders.clone();
        orders[slot] += 1;
        JetCoord { var: self.var, orders }
    }

    /// Componentwise difference if `self` extends `lower` (same variable,
    /// every order at least as large).
    pub fn extension_from(&self, lower: &JetCoord) -> Option<Vec<u32>> {
        if self.var != lower.var || self.orders.len() != lower.orders.len() {
            return None;
        }
        let mut diff = Vec::with_capacity(self.orders.len());
        for (a, b) in self.orders.iter().zip(lower.orders.iter()) {
            if a < b {
                return None;
            }
            diff.push(a - b);
        }
        Some(diff)
    }
}

/// Declaration of a jet space: dimension, variables, constants, functions.
#[derive(Clone, Debug)]
pub struct JetSpace {
    /// Spatial dimension n; independent variables are t, x1..xn.
    pub n: usize,
    pub indeps: Vec<String>,
    pub deps: Vec<DepVar>,
    pub consts: Vec<ConstDecl>,
    pub funcs: Vec<FuncDecl>,
    pub max_order: u32,
}

fn valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    // No underscores: the underscore introduces jet-coordinate identifiers.
    chars.all(|c| c.is_ascii_alphanumeric())
}

impl JetSpace {
    /// Empty space with independent variables t, x1..xn.
    pub fn new(n: usize, max_order: u32) -> Self {
        assert!(n >= 1, "spatial dimension must be positive");
        let mut indeps = vec!["t".to_string()];
        for a in 1..=n {
            indeps.push(format!("x{}", a));
        }
        JetSpace { n, indeps, deps: Vec::new(), consts: Vec::new(), funcs: Vec::new(), max_order }
    }

    /// The usual setup: complex field pair psi/cpsi over (t, x1..xn) and a
    /// real potential W over the same base.
    pub fn schrodinger(n: usize) -> Self {
        let mut sp = JetSpace::new(n, 8);
        sp.add_complex_pair("psi", "cpsi");
        sp.add_dep("W", DepConj::Real);
        sp
    }

    fn full_indep_base(&self) -> Vec<BaseSlot> {
        (0..self.indeps.len()).map(BaseSlot::Indep).collect()
    }

    /// Register a dependent variable over the full independent base.
    pub fn add_dep(&mut self, name: &str, conj: DepConj) -> usize {
        let base = self.full_indep_base();
        self.add_dep_fibered(name, base, conj)
    }

    /// Register a dependent variable over an explicit base.
    pub fn add_dep_fibered(&mut self, name: &str, base: Vec<BaseSlot>, conj: DepConj) -> usize {
        assert!(valid_name(name), "bad variable name {:?}", name);
        assert!(self.lookup(name).is_none(), "duplicate name {:?}", name);
        for slot in &base {
            if let BaseSlot::Dep(d) = slot {
                assert!(*d < self.deps.len(), "base refers to undeclared dependent variable");
            }
        }
        self.deps.push(DepVar { name: name.to_string(), base, conj });
        self.deps.len() - 1
    }

    /// Register a conjugate pair of dependent variables over the full
    /// independent base; returns the first id (partner is id + 1).
    pub fn add_complex_pair(&mut self, name: &str, cname: &str) -> usize {
        let id = self.deps.len();
        let ident: Vec<usize> = (0..self.indeps.len()).collect();
        self.add_dep(name, DepConj::Pair(id + 1, ident.clone()));
        self.add_dep(cname, DepConj::Pair(id, ident));
        id
    }

    pub fn add_const(&mut self, name: &str, real: bool) -> usize {
        assert!(valid_name(name), "bad constant name {:?}", name);
        assert!(self.lookup(name).is_none(), "duplicate name {:?}", name);
        self.consts.push(ConstDecl { name: name.to_string(), real });
        self.consts.len() - 1
    }

    /// Register a real arbitrary function (identity slot permutation).
    pub fn add_func(&mut self, name: &str, arity: usize) -> usize {
        self.add_func_conj(name, arity, FuncConj::RealSwap((0..arity).collect()))
    }

    pub fn add_func_conj(&mut self, name: &str, arity: usize, conj: FuncConj) -> usize {
        assert!(valid_name(name), "bad function name {:?}", name);
        assert!(self.lookup(name).is_none(), "duplicate name {:?}", name);
        if let FuncConj::RealSwap(p) | FuncConj::Pair(_, p) = &conj {
            assert!(p.len() == arity, "conjugation permutation arity mismatch");
        }
        self.funcs.push(FuncDecl { name: name.to_string(), arity, conj });
        self.funcs.len() - 1
    }

    pub fn indep_id(&self, name: &str) -> Option<usize> {
        self.indeps.iter().position(|s| s == name)
    }

    pub fn dep_id(&self, name: &str) -> Option<usize> {
        self.deps.iter().position(|d| d.name == name)
    }

    pub fn const_id(&self, name: &str) -> Option<usize> {
        self.consts.iter().position(|c| c.name == name)
    }

    pub fn func_id(&self, name: &str) -> Option<usize> {
        self.funcs.iter().position(|fd| fd.name == name)
    }

    fn lookup(&self, name: &str) -> Option<()> {
        if self.indep_id(name).is_some()
            || self.dep_id(name).is_some()
            || self.const_id(name).is_some()
            || self.func_id(name).is_some()
        {
            Some(())
        } else {
            None
        }
    }

    /// The zero-order jet coordinate of a dependent variable.
    pub fn jet0(&self, var: usize) -> JetCoord {
        JetCoord { var, orders: vec![0; self.deps[var].base.len()] }
    }

    /// Slot index of an independent variable within a dependent variable's
    /// base, if present.
    pub fn base_slot_of_indep(&self, var: usize, indep: usize) -> Option<usize> {
        self.deps[var].base.iter().position(|s| *s == BaseSlot::Indep(indep))
    }

    /// Slot index of a dependent variable within another's base, if present.
    pub fn base_slot_of_dep(&self, var: usize, dep: usize) -> Option<usize> {
        self.deps[var].base.iter().position(|s| *s == BaseSlot::Dep(dep))
    }

    /// Conjugate of a jet coordinate per the variable's declaration.
    pub fn conj_jet(&self, jet: &JetCoord) -> JetCoord {
        let decl = &self.deps[jet.var];
        let permuted = |perm: &[usize]| -> Vec<u32> {
            perm.iter().map(|&src| jet.orders[src]).collect()
        };
        match &decl.conj {
            DepConj::Real => jet.clone(),
            DepConj::RealSwap(perm) => JetCoord { var: jet.var, orders: permuted(perm) },
            DepConj::Pair(other, perm) => JetCoord { var: *other, orders: permuted(perm) },
        }
    }

    /// Human-readable name of a jet coordinate: `psi`, `psi_tx1`, `W_psi`.
    pub fn jet_name(&self, jet: &JetCoord) -> String {
        let decl = &self.deps[jet.var];
        let mut out = decl.name.clone();
        if jet.order() == 0 {
            return out;
        }
        out.push('_');
        for (slot, &k) in jet.orders.iter().enumerate() {
            let name = match decl.base[slot] {
                BaseSlot::Indep(i) => &self.indeps[i],
                BaseSlot::Dep(d) => &self.deps[d].name,
            };
            for _ in 0..k {
                out.push_str(name);
            }
        }
        out
    }

    /// Resolve a jet-coordinate identifier such as `psi_tx1x1` or `W_psi`.
    /// The tail after the first underscore is a concatenation of base
    /// variable names (optionally separated by further underscores), matched
    /// greedily longest-first. For n = 1 the alias `x` for `x1` is accepted.
    pub fn resolve_jet_ident(&self, ident: &str) -> Option<JetCoord> {
        let us = ident.find('_')?;
        let (head, tail) = (&ident[..us], &ident[us + 1..]);
        let var = self.dep_id(head)?;
        let decl = &self.deps[var];
        let mut names: Vec<(String, usize)> = Vec::new();
        for (slot, bs) in decl.base.iter().enumerate() {
            let name = match bs {
                BaseSlot::Indep(i) => self.indeps[*i].clone(),
                BaseSlot::Dep(d) => self.deps[*d].name.clone(),
            };
            if self.n == 1 && name == "x1" {
                names.push(("x".to_string(), slot));
            }
            names.push((name, slot));
        }
        // Longest name first so e.g. `cpsi` wins over `psi` as a prefix.
        names.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        let mut orders = vec![0u32; decl.base.len()];
        let mut rest = tail;
        while !rest.is_empty() {
            if let Some(stripped) = rest.strip_prefix('_') {
                rest = stripped;
                continue;
            }
            let hit = names.iter().find(|(nm, _)| rest.starts_with(nm.as_str()))?;
            orders[hit.1] += 1;
            rest = &rest[hit.0.len()..];
        }
        if orders.iter().sum::<u32>() == 0 {
            return None;
        }
        Some(JetCoord { var, orders })
    }

    /// Validate a jet coordinate against this space.
    pub fn check_jet(&self, jet: &JetCoord) -> Result<()> {
        if jet.var >= self.deps.len() || jet.orders.len() != self.deps[jet.var].base.len() {
            return Err(Error::UnknownIdent(format!("jet coordinate of variable #{}", jet.var)));
        }
        if jet.order() > self.max_order {
            return Err(Error::OrderExceeded(format!(
                "jet order {} exceeds space maximum {}",
                jet.order(),
                self.max_order
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schrodinger_layout() {
        let sp = JetSpace::schrodinger(2);
        assert_eq!(sp.indeps, vec!["t", "x1", "x2"]);
        assert_eq!(sp.dep_id("psi"), Some(0));
        assert_eq!(sp.dep_id("cpsi"), Some(1));
        assert_eq!(sp.dep_id("W"), Some(2));
    }

    #[test]
    fn jet_ident_round_trip() {
        let sp = JetSpace::schrodinger(2);
        let jet = JetCoord { var: 0, orders: vec![1, 2, 0] };
        let name = sp.jet_name(&jet);
        assert_eq!(name, "psi_tx1x1");
        assert_eq!(sp.resolve_jet_ident(&name), Some(jet));
        // cpsi must not be mistaken for psi.
        let cjet = JetCoord { var: 1, orders: vec![0, 1, 1] };
        assert_eq!(sp.resolve_jet_ident("cpsi_x1x2"), Some(cjet));
        assert_eq!(sp.resolve_jet_ident("psi"), None);
        assert_eq!(sp.resolve_jet_ident("q_t"), None);
    }

    #[test]
    fn fibered_base_and_conjugation() {
        let mut sp = JetSpace::new(2, 8);
        let psi = sp.add_complex_pair("psi", "cpsi");
        let base = vec![
            BaseSlot::Indep(0),
            BaseSlot::Indep(1),
            BaseSlot::Indep(2),
            BaseSlot::Dep(psi),
            BaseSlot::Dep(psi + 1),
        ];
        // Real potential whose conjugate swaps the field slots.
        let w = sp.add_dep_fibered("W", base, DepConj::RealSwap(vec![0, 1, 2, 4, 3]));
        let wpsi = JetCoord { var: w, orders: vec![0, 0, 0, 1, 0] };
        let wcpsi = JetCoord { var: w, orders: vec![0, 0, 0, 0, 1] };
        assert_eq!(sp.conj_jet(&wpsi), wcpsi);
        assert_eq!(sp.conj_jet(&wcpsi), wpsi);
        assert_eq!(sp.jet_name(&wpsi), "W_psi");
        assert_eq!(sp.resolve_jet_ident("W_psicpsi").unwrap().orders, vec![0, 0, 0, 1, 1]);
        // Conjugation of the field pair swaps variables.
        let pt = JetCoord { var: psi, orders: vec![1, 0, 0] };
        assert_eq!(sp.conj_jet(&pt).var, psi + 1);
    }

    #[test]
    fn x_alias_in_one_dimension() {
        let sp = JetSpace::schrodinger(1);
        let jet = sp.resolve_jet_ident("psi_xx").unwrap();
        assert_eq!(jet, JetCoord { var: 0, orders: vec![0, 2] });
        assert_eq!(sp.jet_name(&jet), "psi_x1x1");
    }
}
