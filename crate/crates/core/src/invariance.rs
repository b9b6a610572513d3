//! Symmetry checks and determining-equation extraction.
//!
//! The basic check prolongs a vector field, applies it to every residual of
//! an equation system, reduces on solutions, and reports whether each result
//! vanished. Extraction runs the same computation with an undetermined
//! ansatz whose coefficients are arbitrary-function symbols, then collects
//! coefficients of the independent jet monomials: the resulting rows are the
//! first-order conditions the ansatz coefficients must satisfy.
//!
//! Two extracted systems (or an extracted system and a hand-tabulated one)
//! are compared as linear systems over the unknown-function derivative
//! symbols. Rows may be recombined with coefficients that are rational in
//! the point coordinates, and each side may be closed under coordinate
//! derivatives first — differentiating an identity is information-free — so
//! the comparison is mutual span containment after closure.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::expr::canon::{self, Atom};
use crate::expr::{conj, diff, print, subst, Expr, Node};
use crate::field::{Class, Dir, VectorField};
use crate::report::{CheckReport, ReportItem};
use crate::space::{BaseSlot, DepConj, FuncConj, JetCoord, JetSpace};
use crate::system::EquationSystem;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Direct invariance checks
// ---------------------------------------------------------------------------

/// Apply the prolonged field to every residual of `sys`, reduce on
/// solutions, and report one item per residual.
pub fn check_invariance(
    sp: &JetSpace,
    x: &VectorField,
    sys: &EquationSystem,
) -> Result<CheckReport> {
    let started = Instant::now();
    let px = x.prolong(sp, sys.order().max(1))?;
    let mut items = Vec::new();
    for (k, eq) in sys.eqs.iter().enumerate() {
        let acted = px.act(sp, &eq.residual)?;
        let red = sys.reduce(sp, &acted)?;
        let id = if sys.eqs.len() == 1 {
            x.name.clone()
        } else {
            format!("{} / residual {}", x.name, k)
        };
        items.push(ReportItem::new(id, print::print(sp, &red), red.is_zero()));
    }
    Ok(CheckReport::new(format!("{} on {}", x.name, sys.name), items, started))
}

/// Check a whole list of fields against one system, merging the items.
pub fn check_fields(
    sp: &JetSpace,
    fields: &[VectorField],
    sys: &EquationSystem,
) -> Result<CheckReport> {
    let started = Instant::now();
    let mut parts = Vec::with_capacity(fields.len());
    for x in fields {
        parts.push(check_invariance(sp, x, sys)?);
    }
    Ok(CheckReport::merge(format!("family on {}", sys.name), parts, started))
}

// ---------------------------------------------------------------------------
// Extraction space and ansatz
// ---------------------------------------------------------------------------

/// Ids of everything the extraction needs from its space.
pub struct Ansatz {
    pub field: VectorField,
    /// Unknown coefficient functions: xi0, xi1..xin, eta, ceta, rho.
    pub unknowns: Vec<usize>,
    /// Opaque constants standing for the unknowns' argument slots
    /// (t, x1..xn, psi, cpsi, w) when a closed-form solution is bound in.
    pub params: Vec<usize>,
}

/// Space for extraction: the field pair over (t, x1..xn), the potential as a
/// dependent variable over (t, x1..xn, psi, cpsi), the unknown ansatz
/// coefficients, and the symbols used by the closed-form general solution.
pub fn extraction_space(n: usize) -> JetSpace {
    let mut sp = JetSpace::new(n, 8);
    let psi = sp.add_complex_pair("psi", "cpsi");
    let mut base: Vec<BaseSlot> = (0..=n).map(BaseSlot::Indep).collect();
    base.push(BaseSlot::Dep(psi));
    base.push(BaseSlot::Dep(psi + 1));
    // Conjugating a real potential of a conjugate pair swaps the pair slots.
    let mut perm: Vec<usize> = (0..n + 3).collect();
    perm.swap(n + 1, n + 2);
    sp.add_dep_fibered("W", base, DepConj::RealSwap(perm));
    // Unknown ansatz coefficients; nothing is known about their conjugates.
    for j in 0..=n {
        sp.add_func_conj(&format!("xi{}", j), n + 3, FuncConj::Opaque);
    }
    sp.add_func_conj("eta", n + 3, FuncConj::Opaque);
    sp.add_func_conj("ceta", n + 3, FuncConj::Opaque);
    sp.add_func_conj("rho", n + 4, FuncConj::Opaque);
    // Argument-slot stand-ins for binding closed-form solutions.
    sp.add_const("pt", true);
    for a in 1..=n {
        sp.add_const(&format!("px{}", a), true);
    }
    sp.add_const("ppsi", false);
    sp.add_const("pcpsi", false);
    sp.add_const("pw", true);
    // Symbols of the closed-form general solution.
    sp.add_func("A", 1);
    sp.add_func("B", 1);
    for a in 1..=n {
        sp.add_func(&format!("U{}", a), 1);
    }
    for a in 1..=n {
        for b in (a + 1)..=n {
            sp.add_const(&format!("c{}{}", a, b), true);
        }
    }
    sp.add_const("c1", true);
    sp
}

fn unknown_args(sp: &JetSpace, with_w: bool) -> Vec<Expr> {
    let n = sp.n;
    let mut args: Vec<Expr> = (0..=n).map(Expr::indep).collect();
    args.push(Expr::jet(sp.jet0(sp.dep_id("psi").expect("psi"))));
    args.push(Expr::jet(sp.jet0(sp.dep_id("cpsi").expect("cpsi"))));
    if with_w {
        args.push(Expr::jet(sp.jet0(sp.dep_id("W").expect("W"))));
    }
    args
}

/// An unknown-coefficient application with the given derivative orders.
fn unknown(sp: &JetSpace, name: &str, orders: Vec<u32>) -> Expr {
    let id = sp.func_id(name).expect("unknown coefficient symbol");
    let args = unknown_args(sp, sp.funcs[id].arity == sp.n + 4);
    assert_eq!(orders.len(), sp.funcs[id].arity, "derivative order arity");
    Expr::func(id, orders, args)
}

/// The undetermined point ansatz: coefficients xi^j for the base directions,
/// eta and its conjugate-side partner for the field pair, rho for the
/// potential direction (the only coefficient allowed to see the potential).
pub fn symmetry_ansatz(sp: &JetSpace) -> Result<Ansatz> {
    let n = sp.n;
    let psi = sp.dep_id("psi").expect("psi");
    let cpsi = sp.dep_id("cpsi").expect("cpsi");
    let w = sp.dep_id("W").expect("W");
    let mut coeffs = Vec::new();
    let mut unknowns = Vec::new();
    for j in 0..=n {
        let name = format!("xi{}", j);
        coeffs.push((Dir::Indep(j), unknown(sp, &name, vec![0; n + 3])));
        unknowns.push(sp.func_id(&name).expect("xi"));
    }
    coeffs.push((Dir::Dep(psi), unknown(sp, "eta", vec![0; n + 3])));
    unknowns.push(sp.func_id("eta").expect("eta"));
    coeffs.push((Dir::Dep(cpsi), unknown(sp, "ceta", vec![0; n + 3])));
    unknowns.push(sp.func_id("ceta").expect("ceta"));
    coeffs.push((Dir::Dep(w), unknown(sp, "rho", vec![0; n + 4])));
    unknowns.push(sp.func_id("rho").expect("rho"));
    let mut params = vec![sp.const_id("pt").expect("pt")];
    for a in 1..=sp.n {
        params.push(sp.const_id(&format!("px{}", a)).expect("px"));
    }
    params.push(sp.const_id("ppsi").expect("ppsi"));
    params.push(sp.const_id("pcpsi").expect("pcpsi"));
    params.push(sp.const_id("pw").expect("pw"));
    Ok(Ansatz { field: VectorField::new("ansatz", Class::Point, coeffs)?, unknowns, params })
}

/// The equation system whose invariance conditions are extracted: the field
/// equation, its conjugate, and the constraint that the potential depends on
/// the field pair only through its modulus.
pub fn class_system(sp: &JetSpace) -> Result<EquationSystem> {
    let n = sp.n;
    let psi = sp.dep_id("psi").expect("psi");
    let cpsi = sp.dep_id("cpsi").expect("cpsi");
    let w = sp.dep_id("W").expect("W");
    let jet = |var: usize, f: &dyn Fn(&mut Vec<u32>)| {
        let mut orders = vec![0u32; sp.deps[var].base.len()];
        f(&mut orders);
        Expr::jet(JetCoord { var, orders })
    };
    let psi_t = jet(psi, &|o| o[0] = 1);
    let mut f = Expr::mul(Expr::i(), psi_t.clone());
    for a in 1..=n {
        f = Expr::add(f, jet(psi, &|o| o[a] = 2));
    }
    f = Expr::add(f, Expr::mul(jet(w, &|_| {}), jet(psi, &|_| {})));
    let fc = conj::conj(sp, &f);
    let w_psi = jet(w, &|o| o[n + 1] = 1);
    let w_cpsi = jet(w, &|o| o[n + 2] = 1);
    let g = Expr::sub(
        Expr::mul(jet(psi, &|_| {}), w_psi),
        Expr::mul(jet(cpsi, &|_| {}), w_cpsi),
    );
    EquationSystem::new(
        sp,
        "potential class",
        vec![
            (f, JetCoord { var: psi, orders: first_slot(n + 1) }),
            (fc, JetCoord { var: cpsi, orders: first_slot(n + 1) }),
            (g, JetCoord { var: w, orders: slot_one(n + 3, n + 1) }),
        ],
        false,
    )
}

fn first_slot(len: usize) -> Vec<u32> {
    slot_one(len, 0)
}

fn slot_one(len: usize, at: usize) -> Vec<u32> {
    let mut o = vec![0u32; len];
    o[at] = 1;
    o
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

/// Apply the prolonged field to every residual, reduce, and collect the
/// coefficients of the independent jet monomials. Returns (monomial text,
/// row) pairs; each row is an expression in the point coordinates and the
/// unknown-function derivative symbols that must vanish identically.
pub fn extract_rows(
    sp: &JetSpace,
    x: &VectorField,
    sys: &EquationSystem,
) -> Result<Vec<(String, Expr)>> {
    let px = x.prolong(sp, sys.order().max(1))?;
    let positive_jet = |a: &Atom| matches!(a, Atom::Jet(j) if j.order() >= 1);
    let mut rows: Vec<(String, Expr)> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for eq in &sys.eqs {
        let acted = px.act(sp, &eq.residual)?;
        let red = sys.reduce(sp, &acted)?;
        for (key, coeff) in canon::collect_terms(sp, &red, &positive_jet)? {
            if coeff.jets().iter().any(|j| j.order() >= 1) {
                return Err(Error::NotPolynomial(format!(
                    "residual not polynomial in jet coordinates after reduction: \
                     coefficient of {} still contains a derivative",
                    print::print(sp, &key)
                )));
            }
            let text = print::print(sp, &coeff);
            if seen.insert(text) {
                rows.push((print::print(sp, &key), coeff));
            }
        }
    }
    Ok(rows)
}

/// A full extraction run: space, ansatz, class system, and rows.
pub struct Determining {
    pub sp: JetSpace,
    pub ansatz: Ansatz,
    pub sys: EquationSystem,
    pub rows: Vec<(String, Expr)>,
}

/// Extract the determining system for the undetermined point ansatz in
/// dimension `n`.
pub fn extract_determining(n: usize) -> Result<Determining> {
    let sp = extraction_space(n);
    let ansatz = symmetry_ansatz(&sp)?;
    let sys = class_system(&sp)?;
    let rows = extract_rows(&sp, &ansatz.field, &sys)?;
    Ok(Determining { sp, ansatz, sys, rows })
}

// ---------------------------------------------------------------------------
// The tabulated determining system
// ---------------------------------------------------------------------------

/// The determining system in the form in which it is conventionally
/// tabulated: one labelled row per condition. Subscripts on the unknowns are
/// derivative slots (t, x1..xn, psi, cpsi, and for rho the potential).
pub fn tabulated_determining(sp: &JetSpace) -> Result<Vec<(String, Expr)>> {
    let n = sp.n;
    let psi = Expr::jet(sp.jet0(sp.dep_id("psi").expect("psi")));
    let cpsi = Expr::jet(sp.jet0(sp.dep_id("cpsi").expect("cpsi")));
    let w = Expr::jet(sp.jet0(sp.dep_id("W").expect("W")));
    let half_i = Expr::mul(Expr::ratio(1, 2), Expr::i());
    let d = |name: &str, slots: &[usize]| {
        let arity = if name == "rho" { n + 4 } else { n + 3 };
        let mut orders = vec![0u32; arity];
        for s in slots {
            orders[*s] += 1;
        }
        unknown(sp, name, orders)
    };
    let xi = |j: usize, slots: &[usize]| d(&format!("xi{}", j), slots);
    let mut rows: Vec<(String, Expr)> = Vec::new();
    // No coefficient of a base direction may depend on the field pair.
    for j in 0..=n {
        rows.push((format!("xi{}_psi", j), xi(j, &[n + 1])));
        rows.push((format!("xi{}_cpsi", j), xi(j, &[n + 2])));
    }
    // The time coefficient is space-independent.
    for a in 1..=n {
        rows.push((format!("xi0_x{}", a), xi(0, &[a])));
    }
    // Conformal block: equal diagonal stretch, antisymmetric off-diagonal,
    // and the time stretch is twice the spatial one.
    for a in 1..=n {
        for b in (a + 1)..=n {
            rows.push((
                format!("xi{}_x{} - xi{}_x{}", a, a, b, b),
                Expr::sub(xi(a, &[a]), xi(b, &[b])),
            ));
            rows.push((
                format!("xi{}_x{} + xi{}_x{}", a, b, b, a),
                Expr::add(xi(a, &[b]), xi(b, &[a])),
            ));
        }
    }
    rows.push((
        format!("xi0_t - 2 xi{}_x{}", n, n),
        Expr::sub(xi(0, &[0]), Expr::mul(Expr::int(2), xi(n, &[n]))),
    ));
    // Field-coefficient block and its conjugate-side partner.
    rows.push(("eta_cpsi".into(), d("eta", &[n + 2])));
    rows.push(("eta_psipsi".into(), d("eta", &[n + 1, n + 1])));
    for a in 1..=n {
        rows.push((
            format!("eta_psix{} - (i/2) xi{}_t", a, a),
            Expr::sub(d("eta", &[n + 1, a]), Expr::mul(half_i.clone(), xi(a, &[0]))),
        ));
    }
    rows.push(("ceta_psi".into(), d("ceta", &[n + 1])));
    rows.push(("ceta_cpsicpsi".into(), d("ceta", &[n + 2, n + 2])));
    for a in 1..=n {
        rows.push((
            format!("ceta_cpsix{} + (i/2) xi{}_t", a, a),
            Expr::add(d("ceta", &[n + 2, a]), Expr::mul(half_i.clone(), xi(a, &[0]))),
        ));
    }
    // The two order-zero conditions.
    let mut lap_eta = Expr::zero();
    let mut lap_ceta = Expr::zero();
    for a in 1..=n {
        lap_eta = Expr::add(lap_eta, d("eta", &[a, a]));
        lap_ceta = Expr::add(lap_ceta, d("ceta", &[a, a]));
    }
    let o1 = Expr::sum(vec![
        Expr::mul(Expr::i(), d("eta", &[0])),
        lap_eta,
        Expr::neg(Expr::prod(vec![d("eta", &[n + 1]), w.clone(), psi.clone()])),
        Expr::prod(vec![Expr::int(2), w.clone(), xi(n, &[n]), psi.clone()]),
        Expr::mul(w.clone(), d("eta", &[])),
        Expr::mul(d("rho", &[]), psi.clone()),
    ]);
    rows.push(("order-zero".into(), o1));
    let o2 = Expr::sum(vec![
        Expr::neg(Expr::mul(Expr::i(), d("ceta", &[0]))),
        lap_ceta,
        Expr::neg(Expr::prod(vec![d("ceta", &[n + 2]), w.clone(), cpsi.clone()])),
        Expr::prod(vec![Expr::int(2), w.clone(), xi(n, &[n]), cpsi.clone()]),
        Expr::mul(w.clone(), d("ceta", &[])),
        Expr::mul(d("rho", &[]), cpsi.clone()),
    ]);
    rows.push(("order-zero conjugate".into(), o2));
    // The potential coefficient sees the field pair only through the others.
    rows.push(("rho_psi".into(), d("rho", &[n + 1])));
    rows.push(("rho_cpsi".into(), d("rho", &[n + 2])));
    let mut out = Vec::with_capacity(rows.len());
    for (label, e) in rows {
        out.push((label, e.canonicalize()?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Span comparison over the unknown derivative symbols
// ---------------------------------------------------------------------------

fn is_unknown_atom(a: &Atom, unknowns: &[usize]) -> bool {
    matches!(a, Atom::Func { id, .. } if unknowns.contains(id))
}

/// All first partial derivatives of the rows with respect to the point
/// coordinates (t, x1..xn and the order-zero jets), appended to the rows.
pub fn close_under_derivatives(
    sp: &JetSpace,
    rows: &[Expr],
    depth: u32,
) -> Result<Vec<Expr>> {
    let mut dirs: Vec<diff::PartialVar> =
        (0..=sp.n).map(diff::PartialVar::Indep).collect();
    for var in 0..sp.deps.len() {
        dirs.push(diff::PartialVar::Jet(sp.jet0(var)));
    }
    let mut all: Vec<Expr> = rows.to_vec();
    let mut frontier: Vec<Expr> = rows.to_vec();
    let mut seen: std::collections::BTreeSet<String> =
        rows.iter().map(|r| print::print(sp, r)).collect();
    for _ in 0..depth {
        let mut next = Vec::new();
        for r in &frontier {
            for v in &dirs {
                let dr = diff::partial(r, v)?.canonicalize()?;
                if dr.is_zero() {
                    continue;
                }
                if seen.insert(print::print(sp, &dr)) {
                    next.push(dr);
                }
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    Ok(all)
}

/// Rows as sparse vectors over the unknown derivative symbols. Errors if a
/// row is not homogeneous linear in the unknowns.
fn vectorize(
    sp: &JetSpace,
    rows: &[Expr],
    unknowns: &[usize],
    basis: &mut BTreeMap<String, usize>,
) -> Result<Vec<BTreeMap<usize, Expr>>> {
    let pred = |a: &Atom| is_unknown_atom(a, unknowns);
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut vec_row: BTreeMap<usize, Expr> = BTreeMap::new();
        for (key, coeff) in canon::collect_terms(sp, row, &pred)? {
            let linear = matches!(key.node(), Node::Func { .. });
            if !linear {
                return Err(Error::NotPolynomial(format!(
                    "row is not homogeneous linear in the unknowns: term {}",
                    print::print(sp, &key)
                )));
            }
            let text = print::print(sp, &key);
            let next = basis.len();
            let col = *basis.entry(text).or_insert(next);
            vec_row.insert(col, coeff);
        }
        if !vec_row.is_empty() {
            out.push(vec_row);
        }
    }
    Ok(out)
}

type SparseRow = BTreeMap<usize, Expr>;

fn row_scale_sub(a: &SparseRow, factor: &Expr, b: &SparseRow) -> Result<SparseRow> {
    // a - factor * b, dropping exact zeros.
    let mut out = a.clone();
    for (col, coeff) in b {
        let delta = Expr::mul(factor.clone(), coeff.clone());
        let cur = out.remove(col).unwrap_or_else(Expr::zero);
        let next = Expr::sub(cur, delta).canonicalize()?;
        if !next.is_zero() {
            out.insert(*col, next);
        }
    }
    Ok(out)
}

/// Reduced row-echelon form over the exact expression field. Pivot columns
/// ascend; every pivot coefficient is one; pivot columns are eliminated from
/// all other rows.
fn rref(rows: Vec<SparseRow>) -> Result<Vec<SparseRow>> {
    let mut done: Vec<SparseRow> = Vec::new();
    let mut pending = rows;
    loop {
        // Reduce every pending row by the settled pivots.
        let mut reduced: Vec<SparseRow> = Vec::new();
        for mut row in pending {
            for d in &done {
                let pivot = *d.keys().next().expect("pivot column");
                if let Some(c) = row.get(&pivot).cloned() {
                    row = row_scale_sub(&row, &c, d)?;
                }
            }
            if !row.is_empty() {
                reduced.push(row);
            }
        }
        if reduced.is_empty() {
            break;
        }
        // Take the row with the smallest leading column as the next pivot.
        let lead = |r: &SparseRow| *r.keys().next().expect("nonempty row");
        let best = reduced
            .iter()
            .enumerate()
            .min_by_key(|(i, r)| (lead(r), *i))
            .map(|(i, _)| i)
            .expect("nonempty set");
        let mut pivot_row = reduced.swap_remove(best);
        let pivot_col = lead(&pivot_row);
        let pivot_coeff = pivot_row.get(&pivot_col).cloned().expect("pivot");
        for coeff in pivot_row.values_mut() {
            *coeff = Expr::div(coeff.clone(), pivot_coeff.clone()).canonicalize()?;
        }
        // Eliminate the new pivot from the settled rows too.
        for d in done.iter_mut() {
            if let Some(c) = d.get(&pivot_col).cloned() {
                *d = row_scale_sub(d, &c, &pivot_row)?;
            }
        }
        done.push(pivot_row);
        pending = reduced;
    }
    done.sort_by_key(|r| *r.keys().next().expect("pivot"));
    Ok(done)
}

/// Residue of `row` after elimination by the pivots of an echelon basis.
fn reduce_by(row: &SparseRow, basis: &[SparseRow]) -> Result<SparseRow> {
    let mut out = row.clone();
    for b in basis {
        let pivot = *b.keys().next().expect("pivot");
        if let Some(c) = out.get(&pivot).cloned() {
            out = row_scale_sub(&out, &c, b)?;
        }
    }
    Ok(out)
}

/// Outcome of a two-sided span comparison.
#[derive(Debug)]
pub struct SpanComparison {
    pub equivalent: bool,
    /// Derivative-closure depth that was needed on each side (left: closure
    /// of `a` when containing `b`; right: closure of `b`).
    pub depth_a: u32,
    pub depth_b: u32,
    /// Rows of `a` outside the closed span of `b`, in basis text.
    pub a_leftover: Vec<String>,
    /// Rows of `b` outside the closed span of `a`.
    pub b_leftover: Vec<String>,
}

fn leftover_text(sp: &JetSpace, residue: &SparseRow, basis: &BTreeMap<String, usize>) -> String {
    let names: BTreeMap<usize, &String> = basis.iter().map(|(k, v)| (*v, k)).collect();
    let parts: Vec<String> = residue
        .iter()
        .map(|(col, coeff)| {
            format!("({}) {}", print::print(sp, coeff), names.get(col).map(|s| s.as_str()).unwrap_or("?"))
        })
        .collect();
    parts.join(" + ")
}

/// Is every row of `target` in the span of `source` closed under coordinate
/// derivatives up to `depth`? Returns the leftover rows (empty when
/// contained).
fn contained_at_depth(
    sp: &JetSpace,
    target: &[Expr],
    source: &[Expr],
    unknowns: &[usize],
    depth: u32,
) -> Result<Vec<String>> {
    let closed = close_under_derivatives(sp, source, depth)?;
    let mut basis_cols: BTreeMap<String, usize> = BTreeMap::new();
    let source_rows = vectorize(sp, &closed, unknowns, &mut basis_cols)?;
    let target_rows = vectorize(sp, target, unknowns, &mut basis_cols)?;
    let echelon = rref(source_rows)?;
    let mut leftovers = Vec::new();
    for row in &target_rows {
        let residue = reduce_by(row, &echelon)?;
        if !residue.is_empty() {
            leftovers.push(leftover_text(sp, &residue, &basis_cols));
        }
    }
    Ok(leftovers)
}

/// Compare two determining systems over the same unknowns: mutual span
/// containment, closing each side under coordinate derivatives as needed
/// (up to `max_depth`).
pub fn compare_systems(
    sp: &JetSpace,
    a: &[Expr],
    b: &[Expr],
    unknowns: &[usize],
    max_depth: u32,
) -> Result<SpanComparison> {
    let mut depth_b = 0;
    let mut a_leftover = contained_at_depth(sp, a, b, unknowns, 0)?;
    while !a_leftover.is_empty() && depth_b < max_depth {
        depth_b += 1;
        a_leftover = contained_at_depth(sp, a, b, unknowns, depth_b)?;
    }
    let mut depth_a = 0;
    let mut b_leftover = contained_at_depth(sp, b, a, unknowns, 0)?;
    while !b_leftover.is_empty() && depth_a < max_depth {
        depth_a += 1;
        b_leftover = contained_at_depth(sp, b, a, unknowns, depth_a)?;
    }
    Ok(SpanComparison {
        equivalent: a_leftover.is_empty() && b_leftover.is_empty(),
        depth_a,
        depth_b,
        a_leftover,
        b_leftover,
    })
}

// ---------------------------------------------------------------------------
// Closed-form general solution
// ---------------------------------------------------------------------------

/// Which deliberate defect to plant in the closed-form solution. The intact
/// solution must satisfy every extracted row; each defect must break one.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mutation {
    None,
    /// Drop the antisymmetry of the rotation block.
    SymmetricRotation,
    /// Use the bare phase function on the conjugate side instead of the
    /// shifted one.
    ConjugatePhaseUnshifted,
}

/// Bind the closed-form general solution (optionally mutated) into every
/// extracted row and report whether each vanishes.
pub fn verify_solution(det: &Determining, mutation: Mutation) -> Result<CheckReport> {
    let started = Instant::now();
    let sp = &det.sp;
    let n = sp.n;
    let fid = |name: &str| sp.func_id(name).expect("solution symbol");
    let cid = |name: &str| sp.const_id(name).expect("solution constant");
    let pt = Expr::cnst(cid("pt"));
    let px: Vec<Expr> = (1..=n).map(|a| Expr::cnst(cid(&format!("px{}", a)))).collect();
    let ppsi = Expr::cnst(cid("ppsi"));
    let pcpsi = Expr::cnst(cid("pcpsi"));
    let pw = Expr::cnst(cid("pw"));
    let f1 = |name: &str, k: u32| Expr::func(fid(name), vec![k], vec![pt.clone()]);
    let half = Expr::ratio(1, 2);
    let half_i = Expr::mul(half.clone(), Expr::i());

    // xi0 = 2 A
    let xi0_body = Expr::mul(Expr::int(2), f1("A", 0));
    // xia = A' xa + sum_b C^{ab} xb + Ua, with C antisymmetric (or, under
    // the rotation mutation, symmetric).
    let rot = |a: usize, b: usize| -> Expr {
        // C^{ab} for a != b.
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let c = Expr::cnst(cid(&format!("c{}{}", lo, hi)));
        if a < b || mutation == Mutation::SymmetricRotation {
            c
        } else {
            Expr::neg(c)
        }
    };
    let mut xi_bodies = Vec::new();
    for a in 1..=n {
        let mut body = Expr::add(
            Expr::mul(f1("A", 1), px[a - 1].clone()),
            f1(&format!("U{}", a), 0),
        );
        for b in 1..=n {
            if b != a {
                body = Expr::add(body, Expr::mul(rot(a, b), px[b - 1].clone()));
            }
        }
        xi_bodies.push(body);
    }
    // Shared phase: (1/2) A'' x.x + sum U'_c x_c + B
    let mut xsq = Expr::zero();
    for a in 1..=n {
        xsq = Expr::add(xsq, Expr::mul(px[a - 1].clone(), px[a - 1].clone()));
    }
    let mut phase = Expr::add(
        Expr::mul(half.clone(), Expr::mul(f1("A", 2), xsq.clone())),
        f1("B", 0),
    );
    for a in 1..=n {
        phase = Expr::add(phase, Expr::mul(f1(&format!("U{}", a), 1), px[a - 1].clone()));
    }
    let eta_body = Expr::prod(vec![half_i.clone(), phase.clone(), ppsi.clone()]);
    // Conjugate side: B is shifted to E = B - 2 i n A' + C1 (the phase that
    // makes the pair consistent), unless deliberately left unshifted.
    let e_shift = if mutation == Mutation::ConjugatePhaseUnshifted {
        Expr::zero()
    } else {
        Expr::add(
            Expr::neg(Expr::prod(vec![Expr::int(2), Expr::i(), Expr::int(n as i64), f1("A", 1)])),
            Expr::cnst(cid("c1")),
        )
    };
    let cphase = Expr::add(phase.clone(), e_shift);
    let ceta_body = Expr::neg(Expr::prod(vec![half_i.clone(), cphase, pcpsi.clone()]));
    // rho = (1/2)((1/2) A''' x.x + sum U''_c x_c + B') - (n/2) i A'' - 2 w A'
    let mut rho_inner = Expr::add(
        Expr::mul(half.clone(), Expr::mul(f1("A", 3), xsq.clone())),
        f1("B", 1),
    );
    for a in 1..=n {
        rho_inner = Expr::add(rho_inner, Expr::mul(f1(&format!("U{}", a), 2), px[a - 1].clone()));
    }
    let rho_body = Expr::sum(vec![
        Expr::mul(half.clone(), rho_inner),
        Expr::neg(Expr::prod(vec![
            Expr::ratio(n as i64, 2),
            Expr::i(),
            f1("A", 2),
        ])),
        Expr::neg(Expr::prod(vec![Expr::int(2), pw.clone(), f1("A", 1)])),
    ]);

    let params_short: Vec<usize> = det.ansatz.params[..n + 3].to_vec();
    let params_full: Vec<usize> = det.ansatz.params.clone();
    let mut bindings: Vec<(usize, Vec<usize>, Expr)> = Vec::new();
    bindings.push((fid("xi0"), params_short.clone(), xi0_body));
    for a in 1..=n {
        bindings.push((fid(&format!("xi{}", a)), params_short.clone(), xi_bodies[a - 1].clone()));
    }
    bindings.push((fid("eta"), params_short.clone(), eta_body));
    bindings.push((fid("ceta"), params_short.clone(), ceta_body));
    bindings.push((fid("rho"), params_full, rho_body));

    let mut items = Vec::new();
    for (label, row) in &det.rows {
        let mut bound = row.clone();
        for (func, params, body) in &bindings {
            bound = subst::bind_function(sp, &bound, *func, params, body)?;
        }
        let red = bound.canonicalize()?;
        items.push(ReportItem::new(
            format!("coefficient of {}", label),
            print::print(sp, &red),
            red.is_zero(),
        ));
    }
    let subject = match mutation {
        Mutation::None => "closed-form general solution".to_string(),
        Mutation::SymmetricRotation => "mutated solution (symmetric rotation block)".to_string(),
        Mutation::ConjugatePhaseUnshifted => {
            "mutated solution (conjugate phase unshifted)".to_string()
        }
    };
    Ok(CheckReport::new(subject, items, started))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    #[test]
    fn scaling_field_is_a_symmetry_of_the_free_equation() {
        let sp = JetSpace::schrodinger(1);
        let sys = EquationSystem::from_dsl(
            &sp,
            "free",
            "i*D(psi; t) + D(psi; x1, x1) + W*psi",
            "psi_t",
            true,
        )
        .unwrap();
        let z1 = VectorField::from_dsl(&sp, "Z1", "psi*@psi").unwrap();
        let report = check_invariance(&sp, &z1, &sys).unwrap();
        assert!(report.passed(), "{:?}", report);
        // A wrong field leaves a nonzero residual and fails.
        let bad = VectorField::from_dsl(&sp, "bad", "t*@psi").unwrap();
        let report = check_invariance(&sp, &bad, &sys).unwrap();
        assert!(!report.passed());
        assert!(report.items.iter().any(|it| !it.detail.is_empty()));
    }

    #[test]
    fn class_system_is_consistent_and_reduces_the_constraint() {
        let sp = extraction_space(1);
        let sys = class_system(&sp).unwrap();
        assert_eq!(sys.eqs.len(), 3);
        // The constraint rule turns the psi-slot derivative of the potential
        // into the cpsi-slot one.
        let w = sp.dep_id("W").unwrap();
        let w_psi = Expr::jet(JetCoord { var: w, orders: vec![0, 0, 1, 0] });
        let red = sys.reduce(&sp, &w_psi).unwrap();
        let expect = parse::parse(&sp, "cpsi*W_cpsi/psi").unwrap();
        assert_eq!(print::print(&sp, &red), print::print(&sp, &expect));
    }

    #[test]
    fn restricted_phase_ansatz_yields_no_conditions() {
        let mut sp = extraction_space(1);
        sp.add_const("cmag", true);
        let sys = class_system(&sp).unwrap();
        let psi = sp.dep_id("psi").unwrap();
        let field = VectorField::new(
            "phase",
            Class::Point,
            vec![(
                Dir::Dep(psi),
                Expr::mul(Expr::cnst(sp.const_id("cmag").unwrap()), Expr::jet(sp.jet0(psi))),
            )],
        )
        .unwrap();
        let rows = extract_rows(&sp, &field, &sys).unwrap();
        assert!(rows.is_empty(), "expected no conditions, got {:?}", rows.len());
    }

    #[test]
    fn extraction_in_one_dimension_matches_the_tabulated_system() {
        let det = extract_determining(1).unwrap();
        assert!(!det.rows.is_empty());
        let tab = tabulated_determining(&det.sp).unwrap();
        let a: Vec<Expr> = det.rows.iter().map(|(_, e)| e.clone()).collect();
        let b: Vec<Expr> = tab.iter().map(|(_, e)| e.clone()).collect();
        let cmp = compare_systems(&det.sp, &a, &b, &det.ansatz.unknowns, 2).unwrap();
        assert!(
            cmp.equivalent,
            "extracted vs tabulated differ; extracted-only: {:?}; tabulated-only: {:?}",
            cmp.a_leftover, cmp.b_leftover
        );
    }

    #[test]
    fn general_solution_satisfies_the_extracted_system_and_mutations_fail() {
        let det = extract_determining(1).unwrap();
        let good = verify_solution(&det, Mutation::None).unwrap();
        assert!(
            good.passed(),
            "intact solution failed: {:?}",
            good.items.iter().filter(|it| !it.is_zero).collect::<Vec<_>>()
        );
        let bad = verify_solution(&det, Mutation::ConjugatePhaseUnshifted).unwrap();
        assert!(!bad.passed(), "unshifted conjugate phase slipped through");
    }
}
