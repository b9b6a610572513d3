//! Curated equation systems paired with their symmetry operator families.
//!
//! Each entry couples a jet space, an equation system in solved form, the
//! operator family claimed for it, and the subsets of that family expected
//! to close under the Lie bracket.  Reading notes record the places where
//! the tabulated material is ambiguous and which reading the entry encodes;
//! ambiguous readings are additionally kept as diagnostic variants so both
//! can be run side by side.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::expr::canon;
use crate::expr::parse::parse;
use crate::expr::print::print;
use crate::expr::subst::{self, Rule, Target};
use crate::expr::{conj, diff, Expr};
use crate::field::{self, Class, Dir, VectorField};
use crate::invariance;
use crate::expr::QExp;
use crate::report::{CheckReport, ReportItem};
use crate::space::{FuncConj, JetCoord, JetSpace};
use crate::system::EquationSystem;
use crate::{Error, Result};

/// An alternative reading of an ambiguously tabulated operator, run as a
/// diagnostic next to the main family.
#[derive(Debug)]
pub struct Variant {
    pub label: String,
    pub field: VectorField,
    pub note: String,
}

/// One curated equation system with its operator family.
#[derive(Debug)]
pub struct Entry {
    pub key: String,
    pub sp: JetSpace,
    pub sys: EquationSystem,
    pub fields: Vec<VectorField>,
    /// Subsets of `fields` (by name) expected to close under the bracket.
    pub closure_sets: Vec<(String, Vec<String>)>,
    /// Diagnostic alternative readings, checked separately.
    pub variants: Vec<Variant>,
    /// Reading notes carried into reports about this entry.
    pub notes: Vec<String>,
}

impl Entry {
    pub fn field(&self, name: &str) -> Option<&VectorField> {
        self.fields.iter().find(|f| f.name == name)
    }

    /// The fields of a named closure set, in declaration order.
    pub fn closure_fields(&self, label: &str) -> Option<Vec<&VectorField>> {
        let (_, names) = self.closure_sets.iter().find(|(l, _)| l == label)?;
        names.iter().map(|n| self.field(n)).collect()
    }
}

/// Every addressable entry key.
pub fn keys() -> &'static [&'static str] {
    &[
        "theorem1",
        "laplace-system",
        "heat-system",
        "wave-system",
        "hj-system",
        "kdv-system",
        "convection",
        "euler-system",
        "contact",
        "subalg-exp",
        "subalg-trig",
        "subalg-poly",
    ]
}

/// Build a catalog entry.  `case` selects a classification branch where the
/// entry has one (kdv-system, euler-system); `params` assigns constant
/// values to the entry's symbolic constants.
pub fn build(
    key: &str,
    n: usize,
    case: Option<u32>,
    params: &BTreeMap<String, String>,
) -> Result<Entry> {
    let caseless = |key: &str| -> Result<()> {
        match case {
            None | Some(1) => Ok(()),
            Some(c) => Err(Error::BadKey(format!("the {} entry has no case {}", key, c))),
        }
    };
    let (entry, skip): (Entry, &[&str]) = match key {
        "theorem1" => {
            caseless(key)?;
            (theorem1_entry(n)?, &[])
        }
        "laplace-system" => {
            caseless(key)?;
            (laplace_entry(n)?, &[])
        }
        "heat-system" => {
            caseless(key)?;
            (heat_entry(n)?, &[])
        }
        "wave-system" => {
            caseless(key)?;
            (wave_entry(n)?, &[])
        }
        "hj-system" => {
            caseless(key)?;
            (hj_entry(n)?, &[])
        }
        "kdv-system" => (kdv_entry(n, case, params)?, &["lambda1"]),
        "convection" => {
            caseless(key)?;
            (convection_entry(n)?, &[])
        }
        "euler-system" => (euler_entry(n, case, params)?, &["k"]),
        "contact" => {
            caseless(key)?;
            (contact_entry(n)?, &[])
        }
        "subalg-exp" => {
            caseless(key)?;
            (subalg_exp_entry(n)?, &[])
        }
        "subalg-trig" => {
            caseless(key)?;
            (subalg_trig_entry(n)?, &[])
        }
        "subalg-poly" => (subalg_poly_entry(n, params)?, &["k"]),
        other => return Err(Error::BadKey(format!("unknown catalog key: {}", other))),
    };
    apply_const_params(entry, params, skip)
}

/// Check the main family of an entry against its system.
pub fn check_entry(entry: &Entry) -> Result<CheckReport> {
    invariance::check_fields(&entry.sp, &entry.fields, &entry.sys)
}

/// Check each diagnostic variant separately; returns (label, report, note).
pub fn check_variants(entry: &Entry) -> Result<Vec<(String, CheckReport, String)>> {
    let mut out = Vec::new();
    for v in &entry.variants {
        let rep = invariance::check_invariance(&entry.sp, &v.field, &entry.sys)?;
        out.push((v.label.clone(), rep, v.note.clone()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Text assembly for operator coefficients
// ---------------------------------------------------------------------------

fn term(coef: &str, factors: &str, dir: &str) -> String {
    if factors.is_empty() {
        format!("({})*@{}", coef, dir)
    } else {
        format!("({})*{}*@{}", coef, factors, dir)
    }
}

/// Push the phase pair `coef*(psi d/dpsi - cpsi d/dcpsi)`.
fn spair(out: &mut Vec<String>, coef: &str) {
    out.push(term(coef, "psi", "psi"));
    out.push(term(&format!("-({})", coef), "cpsi", "cpsi"));
}

/// Push the amplitude pair `coef*(psi d/dpsi + cpsi d/dcpsi)`.
fn ppair(out: &mut Vec<String>, coef: &str) {
    out.push(term(coef, "psi", "psi"));
    out.push(term(coef, "cpsi", "cpsi"));
}

fn xsq(n: usize) -> String {
    let parts: Vec<String> = (1..=n).map(|a| format!("x{}^2", a)).collect();
    format!("({})", parts.join(" + "))
}

fn pow_t(p: i64) -> String {
    match p {
        0 => "1".into(),
        1 => "t".into(),
        _ => format!("t^{}", p),
    }
}

fn vf(sp: &JetSpace, name: &str, terms: &[String]) -> Result<VectorField> {
    VectorField::from_dsl(sp, name, &terms.join(" + "))
}

// ---------------------------------------------------------------------------
// Shared pieces
// ---------------------------------------------------------------------------

/// `i psi_t + sum_a psi_{x_a x_a} + W psi` as text.
pub(crate) fn class_residual(n: usize) -> String {
    let mut s = String::from("i*psi_t");
    for a in 1..=n {
        s.push_str(&format!(" + psi_x{0}x{0}", a));
    }
    s.push_str(" + W*psi");
    s
}

/// Build the potential-class system, optionally with an extra condition on
/// the potential given as (residual text, solved jet ident).
pub(crate) fn class_system(
    sp: &JetSpace,
    n: usize,
    name: &str,
    condition: Option<(&str, &str)>,
) -> Result<EquationSystem> {
    let res = parse(sp, &class_residual(n))?;
    let psi_t = sp.resolve_jet_ident("psi_t").expect("psi_t resolves");
    let mut pairs = vec![(res, psi_t)];
    if let Some((ctext, solved)) = condition {
        let c = parse(sp, ctext)?;
        let j = sp
            .resolve_jet_ident(solved)
            .ok_or_else(|| Error::BadKey(format!("cannot resolve {}", solved)))?;
        pairs.push((c, j));
    }
    EquationSystem::new(sp, name, pairs, true)
}

fn p0(sp: &JetSpace) -> Result<VectorField> {
    vf(sp, "P0", &[term("1", "", "t")])
}

fn pa(sp: &JetSpace, a: usize) -> Result<VectorField> {
    vf(sp, &format!("P{}", a), &[term("1", "", &format!("x{}", a))])
}

fn jab(sp: &JetSpace, a: usize, b: usize) -> Result<VectorField> {
    vf(
        sp,
        &format!("J{}{}", a, b),
        &[
            term("1", &format!("x{}", a), &format!("x{}", b)),
            term("-1", &format!("x{}", b), &format!("x{}", a)),
        ],
    )
}

fn z1(sp: &JetSpace) -> Result<VectorField> {
    vf(sp, "Z1", &[term("1", "psi", "psi")])
}

fn z2(sp: &JetSpace) -> Result<VectorField> {
    vf(sp, "Z2", &[term("1", "cpsi", "cpsi")])
}

/// Drift family member with a symbolic amplitude `U_a(t)`.
pub(crate) fn q_drift(sp: &JetSpace, a: usize) -> Result<VectorField> {
    let mut t = vec![term(&format!("U{}(t)", a), "", &format!("x{}", a))];
    spair(&mut t, &format!("(i/2)*U{0}'(t)*x{0}", a));
    t.push(term(&format!("(1/2)*U{0}''(t)", a), &format!("x{}", a), "W"));
    vf(sp, &format!("QU{}", a), &t)
}

/// Time-reparametrization member with a symbolic amplitude `A(t)`.
fn q_time(sp: &JetSpace, n: usize, name: &str, a_of_t: &str) -> Result<VectorField> {
    let ap = format!("{}'", a_of_t);
    let app = format!("{}''", a_of_t);
    let appp = format!("{}'''", a_of_t);
    let mut t = vec![term(&format!("2*{}(t)", a_of_t), "", "t")];
    for c in 1..=n {
        t.push(term(&format!("{}(t)", ap), &format!("x{}", c), &format!("x{}", c)));
    }
    spair(&mut t, &format!("(i/4)*{}(t)*{}", app, xsq(n)));
    ppair(&mut t, &format!("-({}/2)*{}(t)", n, ap));
    t.push(term(
        &format!("(1/4)*{}(t)*{} - 2*W*{}(t)", appp, xsq(n), ap),
        "",
        "W",
    ));
    vf(sp, name, &t)
}

/// Phase-shift member with a symbolic amplitude `B(t)`.
pub(crate) fn q_phase(sp: &JetSpace) -> Result<VectorField> {
    let mut t = Vec::new();
    spair(&mut t, "i*B(t)");
    t.push(term("B'(t)", "", "W"));
    vf(sp, "QB", &t)
}

/// Galilei specialization of the drift family (amplitude t).
fn galilei(sp: &JetSpace, a: usize) -> Result<VectorField> {
    let mut t = vec![term("t", "", &format!("x{}", a))];
    spair(&mut t, &format!("(i/2)*x{}", a));
    vf(sp, &format!("G{}", a), &t)
}

/// Dilation specialization of the time family (amplitude t).
pub(crate) fn dilation(sp: &JetSpace, n: usize) -> Result<VectorField> {
    let mut t = vec![term("2*t", "", "t")];
    for c in 1..=n {
        t.push(term("1", &format!("x{}", c), &format!("x{}", c)));
    }
    ppair(&mut t, &format!("-({}/2)", n));
    t.push(term("-2*W", "", "W"));
    vf(sp, "D", &t)
}

/// Projective specialization of the time family (amplitude t^2/2).
pub(crate) fn projective(sp: &JetSpace, n: usize) -> Result<VectorField> {
    let mut t = vec![term("t^2", "", "t")];
    for c in 1..=n {
        t.push(term("t", &format!("x{}", c), &format!("x{}", c)));
    }
    spair(&mut t, &format!("(i/4)*{}", xsq(n)));
    ppair(&mut t, &format!("-({}/2)*t", n));
    t.push(term("-2*W*t", "", "W"));
    vf(sp, "Aproj", &t)
}

fn schrodinger_space(n: usize, amplitudes: bool) -> JetSpace {
    let mut sp = JetSpace::schrodinger(n);
    if amplitudes {
        sp.add_func("A", 1);
        sp.add_func("B", 1);
        for a in 1..=n {
            sp.add_func(&format!("U{}", a), 1);
        }
    }
    sp
}

// ---------------------------------------------------------------------------
// Entries on the potential class
// ---------------------------------------------------------------------------

fn theorem1_entry(n: usize) -> Result<Entry> {
    let sp = schrodinger_space(n, true);
    let sys = class_system(&sp, n, "potential class", None)?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    for a in 1..=n {
        fields.push(q_drift(&sp, a)?);
    }
    fields.push(q_time(&sp, n, "QA", "A")?);
    fields.push(q_phase(&sp)?);
    for a in 1..=n {
        fields.push(galilei(&sp, a)?);
    }
    fields.push(dilation(&sp, n)?);
    fields.push(projective(&sp, n)?);
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);

    let mut closed = vec!["P0".to_string()];
    for a in 1..=n {
        closed.push(format!("P{}", a));
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            closed.push(format!("J{}{}", a, b));
        }
    }
    for a in 1..=n {
        closed.push(format!("G{}", a));
    }
    closed.extend(["D".into(), "Aproj".into(), "Z1".into(), "Z2".into()]);

    Ok(Entry {
        key: "theorem1".into(),
        sp,
        sys,
        fields,
        closure_sets: vec![("finite specialization subalgebra".into(), closed)],
        variants: Vec::new(),
        notes: Vec::new(),
    })
}

fn laplace_sum(n: usize) -> String {
    let parts: Vec<String> = (1..=n).map(|a| format!("W_x{0}x{0}", a)).collect();
    parts.join(" + ")
}

fn laplace_entry(n: usize) -> Result<Entry> {
    let mut sp = JetSpace::schrodinger(n);
    sp.add_func("B", 1);
    for a in 1..=n {
        sp.add_func(&format!("U{}", a), 1);
    }
    let solved = format!("W_x{0}x{0}", n);
    let sys = class_system(
        &sp,
        n,
        "potential class + harmonic potential",
        Some((&laplace_sum(n), &solved)),
    )?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    for a in 1..=n {
        fields.push(q_drift(&sp, a)?);
    }
    fields.push(dilation(&sp, n)?);
    fields.push(projective(&sp, n)?);
    fields.push(q_phase(&sp)?);
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    Ok(Entry {
        key: "laplace-system".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes: Vec::new(),
    })
}

fn heat_entry(n: usize) -> Result<Entry> {
    let mut sp = JetSpace::schrodinger(n);
    sp.add_const("lambda", true);
    let cond = format!("W_t + lambda*({})", laplace_sum(n));
    let sys = class_system(&sp, n, "potential class + diffusion condition", Some((&cond, "W_t")))?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    fields.push(dilation(&sp, n)?);
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    let mut z3 = Vec::new();
    spair(&mut z3, "i*t");
    z3.push(term("1", "", "W"));
    fields.push(vf(&sp, "Z3", &z3)?);
    Ok(Entry {
        key: "heat-system".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes: vec![
            "reading note: the leading term of the potential condition is taken as the time \
             derivative of the potential"
                .into(),
        ],
    })
}

fn wave_entry(n: usize) -> Result<Entry> {
    let sp = JetSpace::schrodinger(n);
    let cond = format!("W_tt - ({})", laplace_sum(n));
    let sys = class_system(&sp, n, "potential class + wave condition", Some((&cond, "W_tt")))?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    let mut z3 = Vec::new();
    spair(&mut z3, "i*t");
    z3.push(term("1", "", "W"));
    fields.push(vf(&sp, "Z3", &z3)?);
    let mut z4 = Vec::new();
    spair(&mut z4, "i*t^2");
    z4.push(term("2*t", "", "W"));
    fields.push(vf(&sp, "Z4", &z4)?);
    Ok(Entry {
        key: "wave-system".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes: Vec::new(),
    })
}

fn hj_entry(n: usize) -> Result<Entry> {
    let mut sp = JetSpace::schrodinger(n);
    sp.add_const("lambda", true);
    let grads: Vec<String> = (1..=n).map(|a| format!("W_x{0}^2", a)).collect();
    let cond = format!("W_t - lambda*({})", grads.join(" + "));
    let sys = class_system(&sp, n, "potential class + eikonal condition", Some((&cond, "W_t")))?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    let mut z3 = Vec::new();
    spair(&mut z3, "i*t");
    z3.push(term("1", "", "W"));
    fields.push(vf(&sp, "Z3", &z3)?);
    Ok(Entry {
        key: "hj-system".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes: Vec::new(),
    })
}

fn kdv_entry(n: usize, case: Option<u32>, params: &BTreeMap<String, String>) -> Result<Entry> {
    if n != 1 {
        return Err(Error::BadKey("the kdv-system entry is one-dimensional".into()));
    }
    let mut sp = JetSpace::schrodinger(1);
    let l1 = sp.add_const("lambda1", true);
    sp.add_const("lambda2", true);
    let cc = sp.add_const("C", true);
    let fm = sp.add_func("F", 1);
    let pm = sp.add_const("pm", true);

    let const_rhs = match case {
        None | Some(1) => false,
        Some(2) => true,
        Some(c) => {
            return Err(Error::BadKey(format!(
                "the kdv-system entry has cases 1 (arbitrary right side) and 2 (constant right \
                 side), not {}",
                c
            )))
        }
    };

    let mut res = parse(&sp, "W_t + lambda1*W*W_x1 + lambda2*W_x1x1x1 - F(psi*cpsi)")?;
    if const_rhs {
        res = subst::bind_function(&sp, &res, fm, &[pm], &Expr::cnst(cc))?;
    }
    let class = parse(&sp, &class_residual(1))?;
    let psi_t = sp.resolve_jet_ident("psi_t").expect("psi_t resolves");
    let w_t = sp.resolve_jet_ident("W_t").expect("W_t resolves");
    let sys = EquationSystem::new(
        &sp,
        "potential class + kdv condition",
        vec![(class, psi_t), (res, w_t)],
        true,
    )?;

    // A vanishing quadratic coefficient makes the tabulated drift operator
    // singular; fall back to the standard Galilei operator, which is then
    // expected to fail the check.
    let lambda1_zero = match params.get("lambda1") {
        Some(text) => parse(&sp, text)?.canonicalize()?.is_zero(),
        None => false,
    };
    let mut notes = Vec::new();
    let g = if lambda1_zero {
        notes.push(
            "reading note: the quadratic coefficient is zero, so the tabulated drift operator \
             is singular; the standard Galilei operator is checked instead and is expected to \
             fail"
                .into(),
        );
        galilei(&sp, 1)?
    } else {
        let mut t = vec![term("t", "", "x1")];
        spair(&mut t, "(i/2)*(x1 + (2/lambda1)*t)");
        t.push(term("1/lambda1", "", "W"));
        vf(&sp, "G1", &t)?
    };
    if lambda1_zero {
        // Substitute the zero now so the generic parameter pass is a no-op
        // for this constant (the drift operator above no longer mentions it).
        let _ = l1;
    }

    let mut fields = vec![p0(&sp)?, pa(&sp, 1)?];
    if const_rhs {
        fields.push(g);
        fields.push(z1(&sp)?);
        fields.push(z2(&sp)?);
    } else {
        let mut z = Vec::new();
        spair(&mut z, "i");
        fields.push(vf(&sp, "Z", &z)?);
        fields.push(g);
    }
    Ok(Entry {
        key: "kdv-system".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes,
    })
}

// ---------------------------------------------------------------------------
// Entries with velocity potentials
// ---------------------------------------------------------------------------

pub(crate) fn velocity_space(n: usize) -> JetSpace {
    let mut sp = JetSpace::new(n, 8);
    sp.add_complex_pair("psi", "cpsi");
    for a in 1..=n {
        sp.add_complex_pair(&format!("V{}", a), &format!("cV{}", a));
    }
    sp
}

/// `i psi_t + sum_a psi_{aa} - sum_a V_a psi_{x_a}` as text.
fn convection_residual(n: usize) -> String {
    let mut s = String::from("i*psi_t");
    for a in 1..=n {
        s.push_str(&format!(" + psi_x{0}x{0}", a));
    }
    for a in 1..=n {
        s.push_str(&format!(" - V{0}*psi_x{0}", a));
    }
    s
}

/// Rotation with velocity components carried along (unit amplitude).
fn jab_velocity(sp: &JetSpace, a: usize, b: usize) -> Result<VectorField> {
    let t = vec![
        term("1", &format!("x{}", a), &format!("x{}", b)),
        term("-1", &format!("x{}", b), &format!("x{}", a)),
        term("1", &format!("V{}", a), &format!("V{}", b)),
        term("-1", &format!("V{}", b), &format!("V{}", a)),
        term("1", &format!("cV{}", a), &format!("cV{}", b)),
        term("-1", &format!("cV{}", b), &format!("cV{}", a)),
    ];
    vf(sp, &format!("J{}{}", a, b), &t)
}

pub(crate) fn galilei_velocity(sp: &JetSpace, a: usize) -> Result<VectorField> {
    let t = vec![
        term("t", "", &format!("x{}", a)),
        term("-i", "", &format!("V{}", a)),
        term("i", "", &format!("cV{}", a)),
    ];
    vf(sp, &format!("G{}", a), &t)
}

fn convection_entry(n: usize) -> Result<Entry> {
    let mut sp = velocity_space(n);
    sp.add_func("A", 1);
    for a in 1..=n {
        sp.add_func(&format!("U{}", a), 1);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            sp.add_func(&format!("E{}{}", a, b), 1);
        }
    }
    let res = parse(&sp, &convection_residual(n))?;
    let psi_t = sp.resolve_jet_ident("psi_t").expect("psi_t resolves");
    let sys = EquationSystem::new(&sp, "convection class", vec![(res, psi_t)], true)?;

    let mut fields = Vec::new();
    // Time reparametrization with velocity scaling.
    let mut qa = vec![term("2*A(t)", "", "t")];
    for c in 1..=n {
        qa.push(term("A'(t)", &format!("x{}", c), &format!("x{}", c)));
        qa.push(term("-i*A''(t)", &format!("x{}", c), &format!("V{}", c)));
        qa.push(term("i*A''(t)", &format!("x{}", c), &format!("cV{}", c)));
        qa.push(term("-A'(t)", &format!("V{}", c), &format!("V{}", c)));
        qa.push(term("-A'(t)", &format!("cV{}", c), &format!("cV{}", c)));
    }
    fields.push(vf(&sp, "QA", &qa)?);
    // Rotations with arbitrary time-dependent amplitude.
    for a in 1..=n {
        for b in (a + 1)..=n {
            let e = format!("E{}{}(t)", a, b);
            let ep = format!("E{}{}'(t)", a, b);
            let t = vec![
                term(&e, &format!("x{}", a), &format!("x{}", b)),
                term(&format!("-{}", e), &format!("x{}", b), &format!("x{}", a)),
                term(&e, &format!("V{}", a), &format!("V{}", b)),
                term(&format!("-{}", e), &format!("V{}", b), &format!("V{}", a)),
                term(&e, &format!("cV{}", a), &format!("cV{}", b)),
                term(&format!("-{}", e), &format!("cV{}", b), &format!("cV{}", a)),
                term(&format!("-i*{}", ep), &format!("x{}", a), &format!("V{}", b)),
                term(&format!("i*{}", ep), &format!("x{}", b), &format!("V{}", a)),
                term(&format!("i*{}", ep), &format!("x{}", a), &format!("cV{}", b)),
                term(&format!("-i*{}", ep), &format!("x{}", b), &format!("cV{}", a)),
            ];
            fields.push(vf(&sp, &format!("Q{}{}", a, b), &t)?);
        }
    }
    // Drift operators, per-axis reading.
    for a in 1..=n {
        let t = vec![
            term(&format!("U{}(t)", a), "", &format!("x{}", a)),
            term(&format!("-i*U{}'(t)", a), "", &format!("V{}", a)),
            term(&format!("i*U{}'(t)", a), "", &format!("cV{}", a)),
        ];
        fields.push(vf(&sp, &format!("QU{}", a), &t)?);
    }
    fields.push(vf(&sp, "Z1", &[term("1", "psi", "psi")])?);
    fields.push(vf(&sp, "Z2", &[term("1", "cpsi", "cpsi")])?);
    fields.push(vf(&sp, "Z3", &[term("1", "", "psi")])?);
    fields.push(vf(&sp, "Z4", &[term("1", "", "cpsi")])?);
    for a in 1..=n {
        fields.push(galilei_velocity(&sp, a)?);
    }

    // Literal off-axis reading of the drift operator, kept as a diagnostic.
    let mut variants = Vec::new();
    if n >= 2 {
        for a in 1..=n {
            let mut t = Vec::new();
            for c in 1..=n {
                t.push(term(&format!("U{}(t)", a), "", &format!("x{}", c)));
            }
            t.push(term(&format!("-i*U{}'(t)", a), "", &format!("V{}", a)));
            t.push(term(&format!("i*U{}'(t)", a), "", &format!("cV{}", a)));
            variants.push(Variant {
                label: format!("QU{} off-axis literal reading", a),
                field: vf(&sp, &format!("QU{}lit", a), &t)?,
                note: "the tabulated drift operator carries an off-axis summation index in its \
                       leading term; this variant checks that literal reading"
                    .into(),
            });
        }
    }

    Ok(Entry {
        key: "convection".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants,
        notes: vec![
            "reading note: the drift operator is encoded per axis (leading term along its own \
             axis); the literal off-axis reading is kept as a diagnostic variant"
                .into(),
        ],
    })
}

fn euler_entry(n: usize, case: Option<u32>, params: &BTreeMap<String, String>) -> Result<Entry> {
    let case = case.unwrap_or(1);
    if !(1..=5).contains(&case) {
        return Err(Error::BadKey(format!(
            "the euler-system entry has cases 1 through 5, not {}",
            case
        )));
    }
    let mut sp = velocity_space(n);
    let fm = sp.add_func_conj("F", 1, FuncConj::Opaque);
    let cc = sp.add_const("C", false);
    let kk = sp.add_const("k", true);
    let pm = sp.add_const("pm", true);

    // The scaling case names its excluded exponents.
    let k_value = match params.get("k") {
        Some(text) => {
            let v = parse(&sp, text)?.canonicalize()?;
            let num = v
                .as_num()
                .and_then(|g| g.as_rational().cloned())
                .ok_or_else(|| {
                    Error::BadKey("parameter k must be a rational constant".into())
                })?;
            Some(num)
        }
        None => None,
    };
    if case == 2 {
        if let Some(v) = &k_value {
            use num_traits::{One, Zero};
            if v.is_zero() {
                return Err(Error::BadKey(
                    "k = 0 selects the constant right side; use case 4".into(),
                ));
            }
            let minus_one = -num_rational::BigRational::one();
            if *v == minus_one {
                return Err(Error::BadKey(
                    "k = -1 selects the inverse-modulus right side; use case 3".into(),
                ));
            }
        }
    }

    // Right side of the velocity equation per case.
    let body: Option<Expr> = match case {
        1 => None,
        2 => {
            let half_k = match &k_value {
                Some(v) => QExp::from_rational(v / num_rational::BigRational::from_integer(2.into())),
                None => QExp::sym(kk, false).scale(&num_rational::BigRational::new(
                    1.into(),
                    2.into(),
                )),
            };
            Some(Expr::mul(Expr::cnst(cc), Expr::powq(Expr::cnst(pm), half_k)))
        }
        3 => Some(Expr::mul(
            Expr::cnst(cc),
            Expr::powq(Expr::cnst(pm), QExp::from_ratio(-1, 2)),
        )),
        4 => Some(Expr::cnst(cc)),
        5 => Some(Expr::zero()),
        _ => unreachable!(),
    };

    let mut pairs = Vec::new();
    let class = parse(&sp, &convection_residual(n))?;
    pairs.push((class, sp.resolve_jet_ident("psi_t").expect("psi_t resolves")));
    for a in 1..=n {
        let mut text = format!("i*V{}_t", a);
        for b in 1..=n {
            text.push_str(&format!(" - V{0}*V{1}_x{0}", b, a));
        }
        text.push_str(&format!(" - F(psi*cpsi)*psi_x{}", a));
        let mut res = parse(&sp, &text)?;
        if let Some(b) = &body {
            res = subst::bind_function(&sp, &res, fm, &[pm], b)?;
        }
        let solved = sp
            .resolve_jet_ident(&format!("V{}_t", a))
            .expect("velocity time jet resolves");
        pairs.push((res, solved));
    }
    let sys = EquationSystem::new(&sp, "convection class + momentum condition", pairs, true)?;

    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab_velocity(&sp, a, b)?);
        }
    }
    for a in 1..=n {
        fields.push(galilei_velocity(&sp, a)?);
    }
    let scaling = |coef: &str| -> Result<VectorField> {
        let mut t = vec![term("2*t", "", "t")];
        for c in 1..=n {
            t.push(term("1", &format!("x{}", c), &format!("x{}", c)));
            t.push(term("-1", &format!("V{}", c), &format!("V{}", c)));
            t.push(term("-1", &format!("cV{}", c), &format!("cV{}", c)));
        }
        if !coef.is_empty() {
            ppair(&mut t, coef);
        }
        vf(&sp, if coef.is_empty() { "D" } else { "D1" }, &t)
    };
    let mut notes = Vec::new();
    match case {
        1 => {}
        2 => {
            let coef = match &k_value {
                Some(v) => format!("-(2/(1+({})))", v),
                None => "-(2/(1+k))".to_string(),
            };
            fields.push(scaling(&coef)?);
            notes.push(
                "the scaling exponent excludes 0 and -1; those values select the adjacent \
                 constant and inverse-modulus cases"
                    .into(),
            );
        }
        3 => {
            let t = vec![term("1", "psi", "psi"), term("1", "cpsi", "cpsi")];
            fields.push(vf(&sp, "Z", &t)?);
        }
        4 => {
            fields.push(scaling("-2")?);
            fields.push(vf(&sp, "Z3", &[term("1", "", "psi")])?);
            fields.push(vf(&sp, "Z4", &[term("1", "", "cpsi")])?);
        }
        5 => {
            fields.push(scaling("")?);
            let mut at = vec![term("t^2", "", "t")];
            for c in 1..=n {
                at.push(term("t", &format!("x{}", c), &format!("x{}", c)));
                at.push(term(
                    &format!("-(i*x{0} + t*V{0})", c),
                    "",
                    &format!("V{}", c),
                ));
                at.push(term(
                    &format!("i*x{0} - t*cV{0}", c),
                    "",
                    &format!("cV{}", c),
                ));
            }
            fields.push(vf(&sp, "Aproj", &at)?);
            fields.push(vf(&sp, "Z1", &[term("1", "psi", "psi")])?);
            fields.push(vf(&sp, "Z2", &[term("1", "cpsi", "cpsi")])?);
            fields.push(vf(&sp, "Z3", &[term("1", "", "psi")])?);
            fields.push(vf(&sp, "Z4", &[term("1", "", "cpsi")])?);
        }
        _ => unreachable!(),
    }
    Ok(Entry {
        key: "euler-system".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes,
    })
}

// ---------------------------------------------------------------------------
// Contact entry
// ---------------------------------------------------------------------------

/// The potential-direction coefficient forced on a contact operator by the
/// linear evolution form, expressed through the generating function.
fn contact_mu(sp: &JetSpace, gen: &Expr, psi: usize, v: usize) -> Result<Expr> {
    use diff::PartialVar as P;
    let jt = JetCoord { var: psi, orders: vec![1, 0] };
    let jx = JetCoord { var: psi, orders: vec![0, 1] };
    let d = |e: &Expr, p: P| -> Result<Expr> { diff::partial(e, &p) };
    let w_t = d(gen, P::Indep(0))?;
    let w_x = d(gen, P::Indep(1))?;
    let w_psi = d(gen, P::Jet(sp.jet0(psi)))?;
    let w_xx = d(&w_x, P::Indep(1))?;
    let w_xpsi = d(&w_x, P::Jet(sp.jet0(psi)))?;
    let w_xpx = d(&w_x, P::Jet(jx.clone()))?;
    let w_psipx = d(&w_psi, P::Jet(jx.clone()))?;
    let w_psipsi = d(&w_psi, P::Jet(sp.jet0(psi)))?;
    let w_pxpx = d(&d(gen, P::Jet(jx.clone()))?, P::Jet(jx.clone()))?;
    let psit = Expr::jet(jt);
    let psix = Expr::jet(jx);
    let q = Expr::sub(Expr::mul(Expr::i(), psit.clone()), Expr::jet(sp.jet0(v)));
    let mu = Expr::sum(vec![
        Expr::mul(Expr::i(), Expr::add(w_t, Expr::mul(psit, w_psi.clone()))),
        w_xx,
        Expr::prod(vec![Expr::int(2), w_xpsi, psix.clone()]),
        Expr::neg(Expr::mul(
            q.clone(),
            Expr::sum(vec![
                w_xpx.clone(),
                w_psi,
                Expr::mul(psix.clone(), w_psipx.clone()),
            ]),
        )),
        Expr::mul(Expr::powi(psix.clone(), 2), w_psipsi),
        Expr::neg(Expr::mul(
            q.clone(),
            Expr::sum(vec![
                w_xpx,
                Expr::mul(psix, w_psipx),
                Expr::neg(Expr::mul(q, w_pxpx)),
            ]),
        )),
    ]);
    mu.canonicalize()
}

/// Assemble a contact operator from its generating function, including the
/// forced potential-direction coefficient.
pub fn contact_operator(
    sp: &JetSpace,
    name: &str,
    psi: usize,
    v: usize,
    gen: &Expr,
) -> Result<VectorField> {
    let base = field::contact_from_generating(sp, name, psi, gen)?;
    let mu = contact_mu(sp, gen, psi, v)?;
    let mut pairs: Vec<(Dir, Expr)> =
        base.coeffs().map(|(d, e)| (d.clone(), e.clone())).collect();
    pairs.push((Dir::Dep(v), mu));
    VectorField::new(name, Class::Contact, pairs)
}

/// Space for the contact entry: conjugation is not used there, so both
/// variables are declared real and the solved form stays a single equation.
pub(crate) fn contact_space() -> (JetSpace, usize, usize) {
    let mut sp = JetSpace::new(1, 8);
    let psi = sp.add_dep("psi", crate::space::DepConj::Real);
    let v = sp.add_dep("V", crate::space::DepConj::Real);
    (sp, psi, v)
}

fn contact_entry(n: usize) -> Result<Entry> {
    if n != 1 {
        return Err(Error::BadKey("the contact entry is one-dimensional".into()));
    }
    let (mut sp, psi, v) = contact_space();
    sp.add_func("F1", 1);
    sp.add_func_conj("F2", 4, FuncConj::Opaque);

    let res = parse(&sp, "i*psi_t + psi_x1x1 - V")?;
    let solved = sp.resolve_jet_ident("psi_x1x1").expect("psi_x1x1 resolves");
    let sys = EquationSystem::new(&sp, "linear evolution form", vec![(res, solved)], false)?;

    let gen_time_family = parse(&sp, "F1(t)*psi_t")?;
    let gen_graph_family = parse(&sp, "F2(t, x1, psi, psi_x1)")?;
    let gen_time = parse(&sp, "psi_t")?;
    let gen_square = parse(&sp, "-psi_x1^2")?;
    let fields = vec![
        contact_operator(&sp, "QF1", psi, v, &gen_time_family)?,
        contact_operator(&sp, "QF2", psi, v, &gen_graph_family)?,
        contact_operator(&sp, "Qtime", psi, v, &gen_time)?,
        contact_operator(&sp, "Qsquare", psi, v, &gen_square)?,
    ];
    Ok(Entry {
        key: "contact".into(),
        sp,
        sys,
        fields,
        closure_sets: Vec::new(),
        variants: Vec::new(),
        notes: vec![
            "reading note: with the time-only amplitude set to one, the construction yields \
             the negative of the tabulated time translation; both span the same ray"
                .into(),
        ],
    })
}

// ---------------------------------------------------------------------------
// Finite-dimensional subalgebra entries
// ---------------------------------------------------------------------------

fn subalg_exp_entry(n: usize) -> Result<Entry> {
    let mut sp = JetSpace::schrodinger(n);
    sp.add_const("gamma", true);
    let sys = class_system(&sp, n, "potential class", None)?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    for a in 1..=n {
        let mut t = vec![term("exp(gamma*t)", "", &format!("x{}", a))];
        spair(&mut t, &format!("(i/2)*gamma*exp(gamma*t)*x{}", a));
        t.push(term("(1/2)*gamma^2*exp(gamma*t)", &format!("x{}", a), "W"));
        fields.push(vf(&sp, &format!("Qe{}", a), &t)?);
    }
    let mut t = Vec::new();
    spair(&mut t, "i*exp(gamma*t)");
    t.push(term("gamma*exp(gamma*t)", "", "W"));
    fields.push(vf(&sp, "QeB", &t)?);

    let names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();
    Ok(Entry {
        key: "subalg-exp".into(),
        sp,
        sys,
        fields,
        closure_sets: vec![("exponential subalgebra".into(), names)],
        variants: Vec::new(),
        notes: Vec::new(),
    })
}

fn subalg_trig_entry(n: usize) -> Result<Entry> {
    let mut sp = JetSpace::schrodinger(n);
    sp.add_const("nu", true);
    let sys = class_system(&sp, n, "potential class", None)?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    for a in 1..=n {
        let mut t = vec![term("cos(nu*t)", "", &format!("x{}", a))];
        spair(&mut t, &format!("-(i/2)*nu*sin(nu*t)*x{}", a));
        t.push(term("-(1/2)*nu^2*cos(nu*t)", &format!("x{}", a), "W"));
        fields.push(vf(&sp, &format!("Qc{}", a), &t)?);
        let mut t = vec![term("sin(nu*t)", "", &format!("x{}", a))];
        spair(&mut t, &format!("(i/2)*nu*cos(nu*t)*x{}", a));
        t.push(term("-(1/2)*nu^2*sin(nu*t)", &format!("x{}", a), "W"));
        fields.push(vf(&sp, &format!("Qs{}", a), &t)?);
    }
    let mut t = Vec::new();
    spair(&mut t, "i*sin(nu*t)");
    t.push(term("nu*cos(nu*t)", "", "W"));
    fields.push(vf(&sp, "X1", &t)?);
    let mut t = Vec::new();
    spair(&mut t, "i*cos(nu*t)");
    t.push(term("-nu*sin(nu*t)", "", "W"));
    fields.push(vf(&sp, "X2", &t)?);

    let names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();
    Ok(Entry {
        key: "subalg-trig".into(),
        sp,
        sys,
        fields,
        closure_sets: vec![("oscillator subalgebra".into(), names)],
        variants: Vec::new(),
        notes: vec![
            "the two amplitude constants of the tabulated family are absorbed: the cosine and \
             sine components are taken as separate basis fields"
                .into(),
        ],
    })
}

fn subalg_poly_entry(n: usize, params: &BTreeMap<String, String>) -> Result<Entry> {
    let k: i64 = match params.get("k") {
        Some(text) => text.trim().parse().map_err(|_| {
            Error::BadKey("the polynomial chain length k must be a small positive integer".into())
        })?,
        None => 2,
    };
    if !(1..=6).contains(&k) {
        return Err(Error::BadKey(
            "the polynomial chain length k must be between 1 and 6".into(),
        ));
    }
    let sp = JetSpace::schrodinger(n);
    let sys = class_system(&sp, n, "potential class", None)?;
    let mut fields = vec![p0(&sp)?];
    for a in 1..=n {
        fields.push(pa(&sp, a)?);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            fields.push(jab(&sp, a, b)?);
        }
    }
    fields.push(z1(&sp)?);
    fields.push(z2(&sp)?);
    for j in 1..=k {
        let m = k - j + 1;
        for a in 1..=n {
            let mut t = vec![term(&pow_t(m), "", &format!("x{}", a))];
            spair(&mut t, &format!("(i/2)*{}*{}*x{}", m, pow_t(m - 1), a));
            if m >= 2 {
                t.push(term(
                    &format!("(1/2)*{}*{}", m * (m - 1), pow_t(m - 2)),
                    &format!("x{}", a),
                    "W",
                ));
            }
            fields.push(vf(&sp, &format!("Q{}x{}", j, a), &t)?);
        }
    }
    for j in 1..=(2 * k - 2) {
        let mut t = Vec::new();
        spair(&mut t, &format!("i*{}", pow_t(j)));
        t.push(term(&format!("{}*{}", j, pow_t(j - 1)), "", "W"));
        fields.push(vf(&sp, &format!("Q{}B", j), &t)?);
    }

    let names: Vec<String> = fields.iter().map(|f| f.name.clone()).collect();
    Ok(Entry {
        key: "subalg-poly".into(),
        sp,
        sys,
        fields,
        closure_sets: vec![("polynomial chain subalgebra".into(), names)],
        variants: Vec::new(),
        notes: vec![
            "the shortest chain member omits its potential-direction term, whose coefficient \
             vanishes identically"
                .into(),
        ],
    })
}

// ---------------------------------------------------------------------------
// Parameter substitution
// ---------------------------------------------------------------------------

/// Substitute constant parameter values into an entry's system and fields.
/// `skip` lists parameters the builder already consumed structurally.
fn apply_const_params(
    entry: Entry,
    params: &BTreeMap<String, String>,
    skip: &[&str],
) -> Result<Entry> {
    let mut rules: Vec<Rule> = Vec::new();
    for (name, text) in params {
        if skip.contains(&name.as_str()) {
            continue;
        }
        let id = entry.sp.const_id(name).ok_or_else(|| {
            Error::BadKey(format!("unknown parameter {} for the {} entry", name, entry.key))
        })?;
        let value = parse(&entry.sp, text)?.canonicalize()?;
        if !value.is_constant() {
            return Err(Error::BadKey(format!(
                "parameter {} must be a constant expression",
                name
            )));
        }
        rules.push(Rule::new(Target::Const { id, conj: false }, value.clone()));
        if !entry.sp.consts[id].real {
            rules.push(Rule::new(
                Target::Const { id, conj: true },
                conj::conj(&entry.sp, &value),
            ));
        }
    }
    if rules.is_empty() {
        return Ok(entry);
    }
    let Entry { key, sp, sys, fields, closure_sets, variants, notes } = entry;
    let name = sys.name.clone();
    let mut pairs = Vec::new();
    for eq in &sys.eqs {
        let r = subst::substitute(&sp, &eq.residual, &rules)?;
        pairs.push((r, eq.solved.clone()));
    }
    let sys = EquationSystem::new(&sp, &name, pairs, false)?;
    let mut new_fields = Vec::new();
    for f in fields {
        new_fields.push(substitute_field(&sp, &f, &rules)?);
    }
    let mut new_variants = Vec::new();
    for v in variants {
        new_variants.push(Variant {
            label: v.label,
            field: substitute_field(&sp, &v.field, &rules)?,
            note: v.note,
        });
    }
    Ok(Entry {
        key,
        sp,
        sys,
        fields: new_fields,
        closure_sets,
        variants: new_variants,
        notes,
    })
}

fn substitute_field(sp: &JetSpace, f: &VectorField, rules: &[Rule]) -> Result<VectorField> {
    let mut pairs = Vec::new();
    for (d, e) in f.coeffs() {
        pairs.push((d.clone(), subst::substitute(sp, e, rules)?));
    }
    VectorField::new(&f.name, f.class, pairs)
}

// ---------------------------------------------------------------------------
// Bracket closure with structure constants
// ---------------------------------------------------------------------------

/// Result of a closure check: per-pair resolution and the solved structure
/// constants, `constants[(i, j)] = [(k, c)]` meaning `[X_i, X_j] = sum c X_k`.
pub struct BracketTable {
    pub labels: Vec<String>,
    pub constants: BTreeMap<(usize, usize), Vec<(usize, Expr)>>,
    pub report: CheckReport,
}

impl BracketTable {
    /// Look up one structure constant by field names.
    pub fn constant(&self, i: &str, j: &str, k: &str) -> Option<Expr> {
        let pos = |n: &str| self.labels.iter().position(|l| l == n);
        let (i, j, k) = (pos(i)?, pos(j)?, pos(k)?);
        let row = self.constants.get(&(i, j))?;
        row.iter().find(|(kk, _)| *kk == k).map(|(_, c)| c.clone())
    }
}

/// Check that every pairwise bracket of `fields` lies in their span with
/// constant coefficients, solving for the structure constants exactly.  A
/// singular or inconsistent solve is reported as a failed item, not an error.
pub fn closure_check(sp: &JetSpace, label: &str, fields: &[&VectorField]) -> Result<BracketTable> {
    let started = Instant::now();
    let mut spc = sp.clone();
    let unknowns: Vec<usize> = (0..fields.len())
        .map(|k| spc.add_const(&format!("cc{}", k), false))
        .collect();
    let mut items = Vec::new();
    let mut constants = BTreeMap::new();
    for i in 0..fields.len() {
        for j in (i + 1)..fields.len() {
            let bracket = field::lie_bracket(&spc, fields[i], fields[j])?;
            let id = format!("[{}, {}]", fields[i].name, fields[j].name);
            match resolve_in_span(&spc, &bracket, fields, &unknowns)? {
                Ok(combo) => {
                    let detail = if combo.is_empty() {
                        "= 0".to_string()
                    } else {
                        let parts: Vec<String> = combo
                            .iter()
                            .map(|(k, c)| format!("({}) {}", print(&spc, c), fields[*k].name))
                            .collect();
                        format!("= {}", parts.join(" + "))
                    };
                    items.push(ReportItem::new(id, detail, true));
                    constants.insert((i, j), combo);
                }
                Err(leftover) => {
                    items.push(ReportItem::new(
                        id,
                        format!("outside the span: {}", leftover),
                        false,
                    ));
                }
            }
        }
    }
    let report = CheckReport::new(format!("closure of {}", label), items, started);
    Ok(BracketTable {
        labels: fields.iter().map(|f| f.name.clone()).collect(),
        constants,
        report,
    })
}

/// Try to write `target` as a constant-coefficient combination of `fields`.
/// Returns Ok(combination) or Err(description of the first leftover).
#[allow(clippy::type_complexity)]
fn resolve_in_span(
    spc: &JetSpace,
    target: &VectorField,
    fields: &[&VectorField],
    unknowns: &[usize],
) -> Result<std::result::Result<Vec<(usize, Expr)>, String>> {
    use std::collections::BTreeSet;
    let mut dirs: BTreeSet<Dir> = target.coeffs().map(|(d, _)| d.clone()).collect();
    for f in fields {
        dirs.extend(f.coeffs().map(|(d, _)| d.clone()));
    }
    // rows of (coefficients of the unknowns, right-hand side), all constants
    let mut rows: Vec<(Vec<Expr>, Expr)> = Vec::new();
    let zero_rules: Vec<Rule> = unknowns
        .iter()
        .map(|id| Rule::new(Target::Const { id: *id, conj: false }, Expr::zero()))
        .collect();
    for d in &dirs {
        let mut e = target.coeff(d);
        for (k, f) in fields.iter().enumerate() {
            e = Expr::sub(e, Expr::mul(Expr::cnst(unknowns[k]), f.coeff(d)));
        }
        let e = e.canonicalize()?;
        if e.is_zero() {
            continue;
        }
        let non_const = |a: &canon::Atom| !canon::atom_is_constant(a);
        for (_, coef) in canon::collect_terms(spc, &e, &non_const)? {
            let mut row = Vec::with_capacity(unknowns.len());
            for id in unknowns {
                let pv = diff::PartialVar::Const { id: *id, conj: false };
                row.push(diff::partial(&coef, &pv)?.canonicalize()?);
            }
            let c0 = subst::substitute(spc, &coef, &zero_rules)?.canonicalize()?;
            rows.push((row, Expr::neg(c0).canonicalize()?));
        }
    }
    // Exact Gauss-Jordan elimination over the constants.
    let m = unknowns.len();
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; m];
    let mut used: Vec<bool> = vec![false; rows.len()];
    for col in 0..m {
        let Some(r) = (0..rows.len()).find(|&r| !used[r] && !rows[r].0[col].is_zero()) else {
            continue;
        };
        used[r] = true;
        pivot_of_col[col] = Some(r);
        let p = rows[r].0[col].clone();
        for c in 0..m {
            rows[r].0[c] = Expr::div(rows[r].0[c].clone(), p.clone()).canonicalize()?;
        }
        rows[r].1 = Expr::div(rows[r].1.clone(), p.clone()).canonicalize()?;
        for other in 0..rows.len() {
            if other == r || rows[other].0[col].is_zero() {
                continue;
            }
            let f = rows[other].0[col].clone();
            for c in 0..m {
                let sub = Expr::mul(f.clone(), rows[r].0[c].clone());
                rows[other].0[c] = Expr::sub(rows[other].0[c].clone(), sub).canonicalize()?;
            }
            let sub = Expr::mul(f.clone(), rows[r].1.clone());
            rows[other].1 = Expr::sub(rows[other].1.clone(), sub).canonicalize()?;
        }
    }
    // Free columns default to zero, so a pivot row's solution is its rhs.
    let mut solution: Vec<Expr> = vec![Expr::zero(); m];
    for col in 0..m {
        if let Some(r) = pivot_of_col[col] {
            solution[col] = rows[r].1.clone();
        }
    }
    // Verify by substitution: an inconsistent system fails here.
    let mut acc = VectorField::zero("span");
    for (k, f) in fields.iter().enumerate() {
        acc = acc.combine(&Expr::one(), f, &solution[k])?;
    }
    for d in &dirs {
        let diff_e = Expr::sub(target.coeff(d), acc.coeff(d)).canonicalize()?;
        if !diff_e.is_zero() {
            return Ok(Err(format!("@{:?}: {}", d, print(spc, &diff_e))));
        }
    }
    let combo: Vec<(usize, Expr)> = solution
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .collect();
    Ok(Ok(combo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::semantically_equal;

    fn no_params() -> BTreeMap<String, String> {
        BTreeMap::new()
    }

    fn params(kv: &[(&str, &str)]) -> BTreeMap<String, String> {
        kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn theorem1_family_passes_in_one_dimension() {
        let e = build("theorem1", 1, None, &no_params()).unwrap();
        let rep = check_entry(&e).unwrap();
        assert!(rep.passed(), "failing items: {:?}", failing(&rep));
        assert_eq!(rep.items.len(), 2 * e.fields.len());
    }

    #[test]
    fn potential_condition_families_pass_in_one_dimension() {
        for key in ["laplace-system", "heat-system", "wave-system", "hj-system"] {
            let e = build(key, 1, None, &no_params()).unwrap();
            let rep = check_entry(&e).unwrap();
            assert!(rep.passed(), "{}: failing items: {:?}", key, failing(&rep));
        }
    }

    #[test]
    fn kdv_family_passes_and_const_case_extends() {
        let e = build("kdv-system", 1, None, &no_params()).unwrap();
        assert!(e.field("Z").is_some());
        assert!(check_entry(&e).unwrap().passed());
        let e2 = build("kdv-system", 1, Some(2), &no_params()).unwrap();
        assert!(e2.field("Z1").is_some() && e2.field("Z2").is_some());
        assert!(check_entry(&e2).unwrap().passed());
    }

    #[test]
    fn kdv_with_zero_quadratic_coefficient_loses_the_drift_operator() {
        let e = build("kdv-system", 1, None, &params(&[("lambda1", "0")])).unwrap();
        assert!(!e.notes.is_empty());
        let rep = check_entry(&e).unwrap();
        assert!(!rep.passed());
        // Only the drift operator fails.
        for item in &rep.items {
            if !item.is_zero {
                assert!(item.id.starts_with("G1"), "unexpected failure: {}", item.id);
            }
        }
    }

    #[test]
    fn convection_family_passes_and_the_off_axis_reading_fails() {
        let e = build("convection", 2, None, &no_params()).unwrap();
        let rep = check_entry(&e).unwrap();
        assert!(rep.passed(), "failing items: {:?}", failing(&rep));
        let variants = check_variants(&e).unwrap();
        assert_eq!(variants.len(), 2);
        for (label, vrep, _) in variants {
            assert!(!vrep.passed(), "{} unexpectedly passed", label);
        }
    }

    #[test]
    fn euler_cases_pass_in_one_dimension() {
        for case in 1..=5 {
            let e = build("euler-system", 1, Some(case), &no_params()).unwrap();
            let rep = check_entry(&e).unwrap();
            assert!(rep.passed(), "case {}: failing {:?}", case, failing(&rep));
        }
    }

    #[test]
    fn euler_scaling_case_rejects_the_adjacent_exponents() {
        for (k, other) in [("0", "case 4"), ("-1", "case 3")] {
            let err = build("euler-system", 1, Some(2), &params(&[("k", k)])).unwrap_err();
            let text = format!("{}", err);
            assert!(text.contains(other), "{} missing pointer in {}", k, text);
        }
        // A concrete admissible exponent substitutes into the family.
        let e = build("euler-system", 1, Some(2), &params(&[("k", "2")])).unwrap();
        assert!(check_entry(&e).unwrap().passed());
    }

    #[test]
    fn contact_operators_match_the_tabulated_special_case() {
        let e = build("contact", 1, None, &no_params()).unwrap();
        let q = e.field("Qsquare").unwrap();
        // The zero seed marks the expectation as a contact operator whose
        // jet seeds happen to vanish.
        let printed = VectorField::from_dsl(
            &e.sp,
            "expected",
            "(2)*psi_x1*@x1 + (psi_x1^2)*@psi + (-2)*(i*psi_t - V)^2*@V + (0)*@psi_t",
        )
        .unwrap();
        assert!(q.same_field(&printed));
        // The normalized time amplitude gives the negative of a bare time
        // translation.
        let qt = e.field("Qtime").unwrap();
        let minus_p0 =
            VectorField::from_dsl(&e.sp, "expected", "(-1)*@t + (0)*@psi_t").unwrap();
        assert!(qt.same_field(&minus_p0));
    }

    #[test]
    fn contact_operator_matches_its_expanded_tabulated_form() {
        let e = build("contact", 1, None, &no_params()).unwrap();
        let q = e.field("QF2").unwrap();
        let args = "(t, x1, psi, psi_x1)";
        let text = format!(
            "(-F2[0,0,0,1]{a})*@x1 \
             + (F2{a} - psi_x1*F2[0,0,0,1]{a})*@psi \
             + (F2[1,0,0,0]{a} + psi_t*F2[0,0,1,0]{a})*@psi_t \
             + (F2[0,1,0,0]{a} + psi_x1*F2[0,0,1,0]{a})*@psi_x1 \
             + (i*F2[1,0,0,0]{a} + i*psi_t*F2[0,0,1,0]{a} + F2[0,2,0,0]{a} \
                + 2*F2[0,1,1,0]{a}*psi_x1 + psi_x1^2*F2[0,0,2,0]{a} \
                - (i*psi_t - V)*(2*F2[0,1,0,1]{a} + 2*psi_x1*F2[0,0,1,1]{a} + F2[0,0,1,0]{a}) \
                + (i*psi_t - V)^2*F2[0,0,0,2]{a})*@V",
            a = args
        );
        let printed = VectorField::from_dsl(&e.sp, "expected", &text).unwrap();
        assert!(q.same_field(&printed));
    }

    #[test]
    fn contact_family_passes() {
        let e = build("contact", 1, None, &no_params()).unwrap();
        let rep = check_entry(&e).unwrap();
        assert!(rep.passed(), "failing items: {:?}", failing(&rep));
    }

    #[test]
    fn exponential_subalgebra_closes_with_rate_constants() {
        let e = build("subalg-exp", 1, None, &no_params()).unwrap();
        let fields = e.closure_fields("exponential subalgebra").unwrap();
        let table = closure_check(&e.sp, "exponential subalgebra", &fields).unwrap();
        assert!(table.report.passed(), "failing: {:?}", failing(&table.report));
        let gamma = Expr::cnst(e.sp.const_id("gamma").unwrap());
        let c = table.constant("P0", "Qe1", "Qe1").unwrap();
        assert!(semantically_equal(&c, &gamma).unwrap());
        let c = table.constant("P0", "QeB", "QeB").unwrap();
        assert!(semantically_equal(&c, &gamma).unwrap());
        assert!(check_entry(&e).unwrap().passed());
    }

    #[test]
    fn oscillator_subalgebra_closes() {
        let e = build("subalg-trig", 1, None, &no_params()).unwrap();
        let fields = e.closure_fields("oscillator subalgebra").unwrap();
        let table = closure_check(&e.sp, "oscillator subalgebra", &fields).unwrap();
        assert!(table.report.passed(), "failing: {:?}", failing(&table.report));
        // The two drift components rotate into each other under time
        // translation.
        let nu = Expr::cnst(e.sp.const_id("nu").unwrap());
        let c = table.constant("P0", "Qc1", "Qs1").unwrap();
        assert!(semantically_equal(&c, &Expr::neg(nu.clone())).unwrap());
        let c = table.constant("P0", "Qs1", "Qc1").unwrap();
        assert!(semantically_equal(&c, &nu).unwrap());
    }

    #[test]
    fn polynomial_chain_closes_and_steps_down() {
        let e = build("subalg-poly", 1, None, &params(&[("k", "2")])).unwrap();
        let fields = e.closure_fields("polynomial chain subalgebra").unwrap();
        let table = closure_check(&e.sp, "polynomial chain subalgebra", &fields).unwrap();
        assert!(table.report.passed(), "failing: {:?}", failing(&table.report));
        let c = table.constant("P0", "Q1x1", "Q2x1").unwrap();
        assert!(semantically_equal(&c, &Expr::int(2)).unwrap());
        assert!(check_entry(&e).unwrap().passed());
    }

    #[test]
    fn theorem1_specializations_close() {
        let e = build("theorem1", 1, None, &no_params()).unwrap();
        let fields = e.closure_fields("finite specialization subalgebra").unwrap();
        let table =
            closure_check(&e.sp, "finite specialization subalgebra", &fields).unwrap();
        assert!(table.report.passed(), "failing: {:?}", failing(&table.report));
        let c = table.constant("P0", "G1", "P1").unwrap();
        assert!(semantically_equal(&c, &Expr::one()).unwrap());
        let c = table.constant("P0", "Aproj", "D").unwrap();
        assert!(semantically_equal(&c, &Expr::one()).unwrap());
        let c = table.constant("D", "Aproj", "Aproj").unwrap();
        assert!(semantically_equal(&c, &Expr::int(2)).unwrap());
    }

    #[test]
    fn a_single_field_is_trivially_closed() {
        let sp = JetSpace::schrodinger(1);
        let f = p0(&sp).unwrap();
        let table = closure_check(&sp, "one field", &[&f]).unwrap();
        assert!(table.report.passed());
        assert!(table.constants.is_empty());
    }

    #[test]
    fn a_set_that_does_not_close_is_reported_not_thrown() {
        let sp = JetSpace::schrodinger(1);
        // [G1, P1] is a phase pair, which is outside {P1, G1}.
        let fields = [pa(&sp, 1).unwrap(), galilei(&sp, 1).unwrap()];
        let refs: Vec<&VectorField> = fields.iter().collect();
        let table = closure_check(&sp, "broken", &refs).unwrap();
        assert!(!table.report.passed());
    }

    #[test]
    fn unknown_keys_cases_and_parameters_are_rejected() {
        assert!(build("no-such-entry", 1, None, &no_params()).is_err());
        assert!(build("theorem1", 1, Some(3), &no_params()).is_err());
        assert!(build("theorem1", 1, None, &params(&[("nothing", "1")])).is_err());
        assert!(build("kdv-system", 2, None, &no_params()).is_err());
        assert!(build("contact", 2, None, &no_params()).is_err());
    }

    #[test]
    fn parameters_substitute_into_fields_and_constants() {
        let e = build("subalg-exp", 1, None, &params(&[("gamma", "3")])).unwrap();
        let fields = e.closure_fields("exponential subalgebra").unwrap();
        let table = closure_check(&e.sp, "exponential subalgebra", &fields).unwrap();
        assert!(table.report.passed());
        let c = table.constant("P0", "Qe1", "Qe1").unwrap();
        assert!(semantically_equal(&c, &Expr::int(3)).unwrap());
    }

    fn failing(rep: &CheckReport) -> Vec<String> {
        rep.items
            .iter()
            .filter(|i| !i.is_zero)
            .map(|i| format!("{}: {}", i.id, i.detail))
            .collect()
    }
}
