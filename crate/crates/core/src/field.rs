//! Vector fields on jet space: construction, prolongation, application to
//! expressions, and Lie brackets.
//!
//! A field stores base coefficients keyed by direction: independent
//! variables, dependent variables, and (for the contact class) first-order
//! jet directions. Prolongation runs one generic recursion
//!
//! ```text
//! phi[alpha, J+s] = D_s phi[alpha, J] - sum_s' u[alpha, J+s'] * D_s xi[s']
//! ```
//!
//! over each dependent variable's own base slots, so fields over fibered
//! bases (where another dependent variable is a base coordinate) prolong
//! with the same code — the slot coefficient of a dependent base slot is the
//! coefficient on that variable's direction. Contact-class fields seed the
//! first-order coefficients from the given jet directions instead of
//! computing them.

use std::collections::BTreeMap;

use crate::expr::{diff, parse, Expr};
use crate::space::{BaseSlot, JetCoord, JetSpace};
use crate::{Error, Result};

/// Coefficient direction of a first-order operator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum Dir {
    Indep(usize),
    Dep(usize),
    /// First-order jet direction (contact class only).
    Jet(JetCoord),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Class {
    Point,
    Contact,
}

/// A vector field with eagerly cached prolonged coefficients.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub name: String,
    pub class: Class,
    coeffs: BTreeMap<Dir, Expr>,
    prolonged: BTreeMap<JetCoord, Expr>,
    /// Order the prolonged cache covers.
    pub order: u32,
}

fn multi_indices(len: usize, total: u32) -> Vec<Vec<u32>> {
    fn rec(len: usize, total: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if len == 1 {
            cur.push(total);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=total {
            cur.push(k);
            rec(len - 1, total - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if len > 0 {
        rec(len, total, &mut Vec::new(), &mut out);
    }
    out
}

impl VectorField {
    /// Build a field from direction/coefficient pairs. Coefficients are
    /// canonicalized, repeated directions accumulate, zeros are dropped.
    pub fn new(
        name: impl Into<String>,
        class: Class,
        coeffs: Vec<(Dir, Expr)>,
    ) -> Result<VectorField> {
        let mut merged: BTreeMap<Dir, Expr> = BTreeMap::new();
        for (d, e) in coeffs {
            if let Dir::Jet(j) = &d {
                if class == Class::Point {
                    return Err(Error::ClassMismatch(format!(
                        "jet direction in a point field (order {})",
                        j.order()
                    )));
                }
                if j.order() != 1 {
                    return Err(Error::ClassMismatch(
                        "contact seeds must be first-order jet directions".into(),
                    ));
                }
            }
            let entry = merged.remove(&d).unwrap_or_else(Expr::zero);
            merged.insert(d, Expr::add(entry, e));
        }
        let mut out = BTreeMap::new();
        for (d, e) in merged {
            let c = e.canonicalize()?;
            if !c.is_zero() {
                out.insert(d, c);
            }
        }
        Ok(VectorField {
            name: name.into(),
            class,
            coeffs: out,
            prolonged: BTreeMap::new(),
            order: 0,
        })
    }

    /// Parse the vector-field DSL: a sum of `coefficient * @direction`
    /// terms, directions named like `@t @x1 @psi @W @psi_t`.
    pub fn from_dsl(sp: &JetSpace, name: impl Into<String>, text: &str) -> Result<VectorField> {
        let pairs = parse::parse_vector_field(sp, text)?;
        let mut coeffs = Vec::with_capacity(pairs.len());
        let mut class = Class::Point;
        for (dname, coeff) in pairs {
            let dir = if let Some(c) = sp.indep_id(&dname) {
                Dir::Indep(c)
            } else if let Some(d) = sp.dep_id(&dname) {
                Dir::Dep(d)
            } else if let Some(j) = sp.resolve_jet_ident(&dname) {
                sp.check_jet(&j)?;
                class = Class::Contact;
                Dir::Jet(j)
            } else {
                return Err(Error::UnknownIdent(dname));
            };
            coeffs.push((dir, coeff));
        }
        VectorField::new(name, class, coeffs)
    }

    pub fn zero(name: impl Into<String>) -> VectorField {
        VectorField {
            name: name.into(),
            class: Class::Point,
            coeffs: BTreeMap::new(),
            prolonged: BTreeMap::new(),
            order: 0,
        }
    }

    /// Coefficient on a direction (zero when absent).
    pub fn coeff(&self, d: &Dir) -> Expr {
        self.coeffs.get(d).cloned().unwrap_or_else(Expr::zero)
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&Dir, &Expr)> {
        self.coeffs.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Structural equality of canonical coefficients.
    pub fn same_field(&self, other: &VectorField) -> bool {
        self.class == other.class && self.coeffs == other.coeffs
    }

    /// Coefficient attached to a base slot during prolongation.
    fn slot_coeff(&self, slot: &BaseSlot) -> Expr {
        match slot {
            BaseSlot::Indep(c) => self.coeff(&Dir::Indep(*c)),
            BaseSlot::Dep(d) => self.coeff(&Dir::Dep(*d)),
        }
    }

    /// Prolong to the given order (at least 1; coefficients for every
    /// dependent variable and every jet up to the order are cached).
    pub fn prolong(&self, sp: &JetSpace, order: u32) -> Result<VectorField> {
        assert!(order >= 1, "prolongation order must be at least 1");
        self.prolong_to(sp, order)
    }

    fn prolong_to(&self, sp: &JetSpace, order: u32) -> Result<VectorField> {
        let mut out = self.clone();
        out.order = order;
        out.prolonged.clear();
        for (var, dep) in sp.deps.iter().enumerate() {
            let nb = dep.base.len();
            out.prolonged.insert(
                sp.jet0(var),
                self.coeff(&Dir::Dep(var)).canonicalize()?,
            );
            for k in 1..=order {
                for orders in multi_indices(nb, k) {
                    let target = JetCoord { var, orders: orders.clone() };
                    if self.class == Class::Contact && k == 1 {
                        if let Some(seed) = self.coeffs.get(&Dir::Jet(target.clone())) {
                            out.prolonged.insert(target, seed.clone());
                            continue;
                        }
                    }
                    let i = orders
                        .iter()
                        .position(|o| *o > 0)
                        .expect("positive total order");
                    let mut lower = orders.clone();
                    lower[i] -= 1;
                    let prev = out
                        .prolonged
                        .get(&JetCoord { var, orders: lower.clone() })
                        .expect("graded recursion order")
                        .clone();
                    let slot_i = dep.base[i];
                    let mut terms = vec![diff::total_derivative(sp, &prev, slot_i)?];
                    for (s, bs) in dep.base.iter().enumerate() {
                        let xi = self.slot_coeff(bs);
                        if xi.is_zero() {
                            continue;
                        }
                        let dxi = diff::total_derivative(sp, &xi, slot_i)?;
                        if dxi.is_zero() {
                            continue;
                        }
                        let mut bumped = lower.clone();
                        bumped[s] += 1;
                        terms.push(Expr::neg(Expr::mul(
                            Expr::jet(JetCoord { var, orders: bumped }),
                            dxi,
                        )));
                    }
                    let phi = Expr::sum(terms).canonicalize()?;
                    out.prolonged.insert(target, phi);
                }
            }
        }
        Ok(out)
    }

    /// Prolonged coefficient on a jet coordinate.
    pub fn prolonged_coeff(&self, j: &JetCoord) -> Result<Expr> {
        if j.order() == 0 {
            return Ok(self.coeff(&Dir::Dep(j.var)));
        }
        self.prolonged
            .get(j)
            .cloned()
            .ok_or_else(|| Error::MissingProlongation(format!("order {} jet", j.order())))
    }

    /// Apply the (prolonged) field to an expression: the sum of coefficients
    /// times partial derivatives, canonicalized.
    pub fn act(&self, sp: &JetSpace, e: &Expr) -> Result<Expr> {
        if self.coeffs.is_empty() {
            return Ok(Expr::zero());
        }
        let mut terms = Vec::new();
        for (d, c) in &self.coeffs {
            if let Dir::Indep(i) = d {
                let de = diff::partial(e, &diff::PartialVar::Indep(*i))?;
                if !de.is_zero() {
                    terms.push(Expr::mul(c.clone(), de));
                }
            }
        }
        for j in e.jets() {
            let phi = if j.order() == 0 {
                self.coeff(&Dir::Dep(j.var))
            } else {
                self.prolonged.get(&j).cloned().ok_or_else(|| {
                    Error::MissingProlongation(sp.jet_name(&j))
                })?
            };
            if phi.is_zero() {
                continue;
            }
            let de = diff::partial(e, &diff::PartialVar::Jet(j.clone()))?;
            if !de.is_zero() {
                terms.push(Expr::mul(phi, de));
            }
        }
        Expr::sum(terms).canonicalize()
    }

    /// Coefficient-wise linear combination `a*self + b*other` (constant
    /// weights); the prolonged cache is dropped.
    pub fn combine(&self, a: &Expr, other: &VectorField, b: &Expr) -> Result<VectorField> {
        if self.class != other.class {
            return Err(Error::ClassMismatch(
                "combining point and contact fields".into(),
            ));
        }
        let mut coeffs = Vec::new();
        for (d, c) in &self.coeffs {
            coeffs.push((d.clone(), Expr::mul(a.clone(), c.clone())));
        }
        for (d, c) in &other.coeffs {
            coeffs.push((d.clone(), Expr::mul(b.clone(), c.clone())));
        }
        VectorField::new(
            format!("{}+{}", self.name, other.name),
            self.class,
            coeffs,
        )
    }

    pub fn scale(&self, a: &Expr) -> Result<VectorField> {
        let mut coeffs = Vec::new();
        for (d, c) in &self.coeffs {
            coeffs.push((d.clone(), Expr::mul(a.clone(), c.clone())));
        }
        VectorField::new(self.name.clone(), self.class, coeffs)
    }
}

/// Lie bracket of two point fields: coefficients X(Y^dir) - Y(X^dir).
pub fn lie_bracket(sp: &JetSpace, x: &VectorField, y: &VectorField) -> Result<VectorField> {
    if x.class != Class::Point || y.class != Class::Point {
        return Err(Error::ClassMismatch("Lie bracket needs point fields".into()));
    }
    // Point coefficients contain only order-zero jets, so acting on them
    // needs no prolonged cache beyond the base coefficients.
    let px = x.prolong_to(sp, 0)?;
    let py = y.prolong_to(sp, 0)?;
    let mut dirs: Vec<Dir> = Vec::new();
    for (d, _) in x.coeffs().chain(y.coeffs()) {
        if !dirs.contains(d) {
            dirs.push(d.clone());
        }
    }
    let mut coeffs = Vec::new();
    for d in dirs {
        let c = Expr::sub(px.act(sp, &y.coeff(&d))?, py.act(sp, &x.coeff(&d))?);
        coeffs.push((d, c));
    }
    VectorField::new(format!("[{},{}]", x.name, y.name), Class::Point, coeffs)
}

/// Build a contact field from a generating function of
/// (t, x, psi, psi_t, psi_x): coefficients
/// `xi^nu = -dG/dpsi_nu`, `eta = G - psi_nu dG/dpsi_nu`,
/// `zeta^nu = dG/dx_nu + psi_nu dG/dpsi`.
pub fn contact_from_generating(
    sp: &JetSpace,
    name: impl Into<String>,
    psi: usize,
    gen: &Expr,
) -> Result<VectorField> {
    assert_eq!(sp.n, 1, "contact construction is one-dimensional");
    let jt = JetCoord { var: psi, orders: vec![1, 0] };
    let jx = JetCoord { var: psi, orders: vec![0, 1] };
    let d = |v: diff::PartialVar| -> Result<Expr> { diff::partial(gen, &v) };
    let g_t = d(diff::PartialVar::Indep(0))?;
    let g_x = d(diff::PartialVar::Indep(1))?;
    let g_psi = d(diff::PartialVar::Jet(sp.jet0(psi)))?;
    let g_pt = d(diff::PartialVar::Jet(jt.clone()))?;
    let g_px = d(diff::PartialVar::Jet(jx.clone()))?;
    let psi_t = Expr::jet(jt.clone());
    let psi_x = Expr::jet(jx.clone());
    let eta = Expr::sub(
        gen.clone(),
        Expr::add(
            Expr::mul(psi_t.clone(), g_pt.clone()),
            Expr::mul(psi_x.clone(), g_px.clone()),
        ),
    );
    let zeta_t = Expr::add(g_t, Expr::mul(psi_t.clone(), g_psi.clone()));
    let zeta_x = Expr::add(g_x, Expr::mul(psi_x.clone(), g_psi));
    VectorField::new(
        name,
        Class::Contact,
        vec![
            (Dir::Indep(0), Expr::neg(g_pt)),
            (Dir::Indep(1), Expr::neg(g_px)),
            (Dir::Dep(psi), eta),
            (Dir::Jet(jt), zeta_t),
            (Dir::Jet(jx), zeta_x),
        ],
    )
}

/// Recover the generating function of a contact field:
/// `G = eta - psi_t xi^0 - psi_x xi^1`.
pub fn generating_function(sp: &JetSpace, x: &VectorField, psi: usize) -> Result<Expr> {
    let jt = JetCoord { var: psi, orders: vec![1, 0] };
    let jx = JetCoord { var: psi, orders: vec![0, 1] };
    let _ = sp;
    Expr::sum(vec![
        x.coeff(&Dir::Dep(psi)),
        Expr::neg(Expr::mul(Expr::jet(jt), x.coeff(&Dir::Indep(0)))),
        Expr::neg(Expr::mul(Expr::jet(jx), x.coeff(&Dir::Indep(1)))),
    ])
    .canonicalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse::parse;
    use crate::expr::semantically_equal;

    fn space(n: usize) -> JetSpace {
        let mut sp = JetSpace::schrodinger(n);
        sp.add_func("B", 1);
        sp
    }

    /// Independent oracle: the characteristic (closed-form) prolongation
    /// phi[J] = D_J(eta - xi^mu u_mu) + xi^mu u_{J+mu}, computed without the
    /// recursion used by `prolong`.
    fn characteristic_coeff(
        sp: &JetSpace,
        x: &VectorField,
        j: &JetCoord,
    ) -> Expr {
        let var = j.var;
        let base = &sp.deps[var].base;
        let mut q = x.coeff(&Dir::Dep(var));
        for (s, bs) in base.iter().enumerate() {
            let mut e1 = vec![0u32; base.len()];
            e1[s] = 1;
            q = Expr::sub(
                q,
                Expr::mul(
                    x.slot_coeff(bs),
                    Expr::jet(JetCoord { var, orders: e1 }),
                ),
            );
        }
        let dq = diff::total_derivative_multi(sp, &q, base, &j.orders).unwrap();
        let mut out = vec![dq];
        for (s, bs) in base.iter().enumerate() {
            let xi = x.slot_coeff(bs);
            if xi.is_zero() {
                continue;
            }
            out.push(Expr::mul(Expr::jet(j.bump(s)), xi));
        }
        Expr::sum(out).canonicalize().unwrap()
    }

    #[test]
    fn translation_prolongs_trivially() {
        let sp = space(2);
        let p1 = VectorField::from_dsl(&sp, "P1", "1*@x1").unwrap();
        let pr = p1.prolong(&sp, 2).unwrap();
        for (j, c) in &pr.prolonged {
            assert!(c.is_zero(), "nonzero prolonged coefficient on {:?}", j);
        }
    }

    #[test]
    fn scaling_field_prolongs_to_jets() {
        let sp = space(1);
        let psi = sp.dep_id("psi").unwrap();
        let z1 = VectorField::from_dsl(&sp, "Z1", "psi*@psi").unwrap();
        let pr = z1.prolong(&sp, 2).unwrap();
        for orders in [vec![1, 0], vec![0, 1], vec![1, 1], vec![0, 2]] {
            let j = JetCoord { var: psi, orders };
            let phi = pr.prolonged_coeff(&j).unwrap();
            assert_eq!(phi, Expr::jet(j));
        }
    }

    #[test]
    fn galilei_time_coefficient_matches_hand_computation() {
        let sp = space(1);
        let psi = sp.dep_id("psi").unwrap();
        let g = VectorField::from_dsl(
            &sp,
            "G1",
            "t*@x1 + (i/2)*x1*psi*@psi - (i/2)*x1*cpsi*@cpsi",
        )
        .unwrap();
        let pr = g.prolong(&sp, 2).unwrap();
        let phi_t = pr
            .prolonged_coeff(&JetCoord { var: psi, orders: vec![1, 0] })
            .unwrap();
        let expect = parse(&sp, "(i/2)*x1*psi_t - psi_x1").unwrap();
        assert_eq!(phi_t, expect);
    }

    #[test]
    fn recursion_matches_characteristic_formula() {
        let sp = space(1);
        let fields = [
            VectorField::from_dsl(
                &sp,
                "G1",
                "t*@x1 + (i/2)*x1*psi*@psi - (i/2)*x1*cpsi*@cpsi",
            )
            .unwrap(),
            VectorField::from_dsl(
                &sp,
                "QB",
                "i*B(t)*psi*@psi - i*B(t)*cpsi*@cpsi + B'(t)*@W",
            )
            .unwrap(),
            VectorField::from_dsl(&sp, "Z1", "psi*@psi").unwrap(),
        ];
        for x in &fields {
            let pr = x.prolong(&sp, 2).unwrap();
            for (j, phi) in &pr.prolonged {
                if j.order() == 0 {
                    continue;
                }
                let oracle = characteristic_coeff(&sp, x, j);
                assert_eq!(
                    phi, &oracle,
                    "{}: recursion and characteristic formula disagree on {:?}",
                    x.name, j
                );
            }
        }
    }

    #[test]
    fn acting_on_the_residual() {
        let sp = space(1);
        let residual = parse(&sp, "i*psi_t + psi_x1x1 + W*psi").unwrap();
        // The scaling field reproduces a residual linear in psi.
        let z1 = VectorField::from_dsl(&sp, "Z1", "psi*@psi")
            .unwrap()
            .prolong(&sp, 2)
            .unwrap();
        let acted = z1.act(&sp, &residual).unwrap();
        assert!(semantically_equal(&acted, &residual).unwrap());
        // The zero field annihilates everything.
        let zero = VectorField::zero("0");
        assert!(zero.act(&sp, &residual).unwrap().is_zero());
        // i*B(psi d_psi - cpsi d_cpsi) + B' d_W multiplies the residual by iB.
        let qb = VectorField::from_dsl(
            &sp,
            "QB",
            "i*B(t)*psi*@psi - i*B(t)*cpsi*@cpsi + B'(t)*@W",
        )
        .unwrap()
        .prolong(&sp, 2)
        .unwrap();
        let acted = qb.act(&sp, &residual).unwrap();
        let expect = parse(&sp, "i*B(t)*(i*psi_t + psi_x1x1 + W*psi)").unwrap();
        assert_eq!(acted, expect);
    }

    #[test]
    fn brackets() {
        let sp = space(2);
        let g1 = VectorField::from_dsl(
            &sp,
            "G1",
            "t*@x1 + (i/2)*x1*psi*@psi - (i/2)*x1*cpsi*@cpsi",
        )
        .unwrap();
        // Antisymmetry: [X, X] = 0.
        assert!(lie_bracket(&sp, &g1, &g1).unwrap().is_zero());
        // [P0, G1] = P1.
        let p0 = VectorField::from_dsl(&sp, "P0", "1*@t").unwrap();
        let p1 = VectorField::from_dsl(&sp, "P1", "1*@x1").unwrap();
        let b = lie_bracket(&sp, &p0, &g1).unwrap();
        assert!(b.same_field(&p1), "[P0,G1] = {:?}", b);
        // [P1, J12] = P2.
        let j12 = VectorField::from_dsl(&sp, "J12", "x1*@x2 - x2*@x1").unwrap();
        let p2 = VectorField::from_dsl(&sp, "P2", "1*@x2").unwrap();
        let b = lie_bracket(&sp, &p1, &j12).unwrap();
        assert!(b.same_field(&p2), "[P1,J12] = {:?}", b);
    }

    #[test]
    fn contact_construction_round_trips() {
        // Space of section-six shape: one spatial dimension, psi and a
        // potential V, no conjugate closure.
        let mut sp = JetSpace::new(1, 8);
        let psi = sp.add_dep("psi", crate::space::DepConj::Real);
        let _v = sp.add_dep("V", crate::space::DepConj::Real);
        let gen = parse(&sp, "psi_t + psi_x1^2").unwrap();
        let x = contact_from_generating(&sp, "Q", psi, &gen).unwrap();
        let back = generating_function(&sp, &x, psi).unwrap();
        assert_eq!(back, gen.canonicalize().unwrap());
        // eta = G - psi_t G_{psi_t} - psi_x G_{psi_x} = -psi_x1^2
        assert_eq!(
            x.coeff(&Dir::Dep(psi)),
            parse(&sp, "-psi_x1^2").unwrap()
        );
    }
}
