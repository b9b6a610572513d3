//! Grid verification that closed-form (psi, W) pairs satisfy their equation.
//!
//! The symbolic layer proves the identities exactly; this layer spot-checks
//! the same claims in floating point, which catches plumbing mistakes the
//! exact layer cannot see (a wrong rule wired to the right proof). Residuals
//! are evaluated pointwise on a uniform grid in two modes: analytic
//! (symbolic derivatives of the bound solution, then evaluation) and
//! second-order centered finite differences (interior points only). The
//! norm is the max norm, because the claim under test is a pointwise
//! identity, and grid evaluation is kept sequential so the reduction is
//! deterministic.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::Serialize;

use crate::expr::eval::Bindings;
use crate::expr::parse::parse;
use crate::expr::{conj, diff, Expr};
use crate::space::{BaseSlot, DepConj, JetCoord, JetSpace};
use crate::system::EquationSystem;
use crate::{catalog, flows, Error, Result};

/// How derivatives of the bound solution are taken.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DerivMode {
    Analytic,
    Fd,
}

impl DerivMode {
    pub fn from_key(key: &str) -> Result<DerivMode> {
        match key {
            "analytic" => Ok(DerivMode::Analytic),
            "fd" => Ok(DerivMode::Fd),
            other => Err(Error::BadKey(format!(
                "unknown derivative mode `{}` (analytic, fd)",
                other
            ))),
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            DerivMode::Analytic => "analytic",
            DerivMode::Fd => "fd",
        }
    }
}

/// Uniform rectangular grid over (t, x1).
#[derive(Clone, Debug)]
pub struct Grid1D {
    pub t_range: (f64, f64),
    pub x_range: (f64, f64),
    pub nt: usize,
    pub nx: usize,
    pub mode: DerivMode,
}

impl Grid1D {
    pub fn new(
        t_range: (f64, f64),
        x_range: (f64, f64),
        nt: usize,
        nx: usize,
        mode: DerivMode,
    ) -> Result<Grid1D> {
        if nt < 3 || nx < 3 {
            return Err(Error::BadGrid(format!(
                "{}x{} is too small: at least 3 points per axis",
                nt, nx
            )));
        }
        for (lo, hi) in [t_range, x_range] {
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return Err(Error::BadGrid(format!(
                    "range [{}, {}] is not a finite increasing interval",
                    lo, hi
                )));
            }
        }
        Ok(Grid1D { t_range, x_range, nt, nx, mode })
    }

    /// The default verification grid: 201x201 over t in [0, 1], x in [-5, 5].
    pub fn standard(mode: DerivMode) -> Grid1D {
        Grid1D { t_range: (0.0, 1.0), x_range: (-5.0, 5.0), nt: 201, nx: 201, mode }
    }

    pub fn ht(&self) -> f64 {
        (self.t_range.1 - self.t_range.0) / (self.nt - 1) as f64
    }

    pub fn hx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    pub fn t_at(&self, i: usize) -> f64 {
        self.t_range.0 + self.ht() * i as f64
    }

    pub fn x_at(&self, j: usize) -> f64 {
        self.x_range.0 + self.hx() * j as f64
    }

    /// Same ranges with both spacings halved.
    pub fn refined(&self) -> Grid1D {
        Grid1D {
            nt: 2 * self.nt - 1,
            nx: 2 * self.nx - 1,
            ..self.clone()
        }
    }

    pub fn label(&self) -> String {
        format!("{}x{}", self.nt, self.nx)
    }
}

/// Reject grids that touch the singular set of a flow: every domain
/// expression must stay at least 1e-6 away from zero on all grid points.
pub fn check_clear_of_singularities(
    sp: &JetSpace,
    grid: &Grid1D,
    domains: &[Expr],
    consts: &[(&str, Complex64)],
) -> Result<()> {
    if domains.is_empty() {
        return Ok(());
    }
    let mut b = Bindings::new(sp);
    bind_consts(sp, &mut b, consts)?;
    for d in domains {
        if !d.jets().is_empty() {
            return Err(Error::BadKey(
                "domain annotations must be expressions in the base coordinates".into(),
            ));
        }
        for i in 0..grid.nt {
            b.set_indep(0, Complex64::new(grid.t_at(i), 0.0));
            for j in 0..grid.nx {
                b.set_indep(1, Complex64::new(grid.x_at(j), 0.0));
                let v = b.eval(d)?;
                if v.norm() < 1e-6 {
                    return Err(Error::Pole(format!(
                        "the grid meets the singular set at t = {}, x1 = {}",
                        grid.t_at(i),
                        grid.x_at(j)
                    )));
                }
            }
        }
    }
    Ok(())
}

fn bind_consts(sp: &JetSpace, b: &mut Bindings, consts: &[(&str, Complex64)]) -> Result<()> {
    for (name, v) in consts {
        let id = sp
            .const_id(name)
            .ok_or_else(|| Error::BadKey(format!("no constant `{}` in this space", name)))?;
        b.set_const(id, *v);
    }
    Ok(())
}

/// Closed-form sources for every dependent variable the system can mention:
/// psi, its conjugate, and W.
fn dep_sources(sp: &JetSpace, psi: &Expr, w: &Expr) -> Result<BTreeMap<usize, Expr>> {
    for (label, e) in [("wave function", psi), ("potential", w)] {
        if !e.jets().is_empty() {
            return Err(Error::BadKey(format!(
                "the {} must be a closed-form expression in the base coordinates",
                label
            )));
        }
    }
    let pd = sp
        .dep_id("psi")
        .ok_or_else(|| Error::BadKey("the space has no wave function psi".into()))?;
    let mut out = BTreeMap::new();
    out.insert(pd, psi.clone());
    if let DepConj::Pair(other, _) = &sp.deps[pd].conj {
        out.insert(*other, conj::conj(sp, psi));
    }
    if let Some(wd) = sp.dep_id("W") {
        out.insert(wd, w.clone());
    }
    Ok(out)
}

/// All jet coordinates the system's residuals mention.
fn needed_jets(sys: &EquationSystem) -> Vec<JetCoord> {
    let mut set = std::collections::BTreeSet::new();
    for eq in &sys.eqs {
        set.extend(eq.residual.jets());
    }
    set.into_iter().collect()
}

/// Second-order centered stencil weights for one axis: offset -1, 0, +1.
fn stencil(order: u32, h: f64) -> Result<[f64; 3]> {
    match order {
        0 => Ok([0.0, 1.0, 0.0]),
        1 => Ok([-0.5 / h, 0.0, 0.5 / h]),
        2 => Ok([1.0 / (h * h), -2.0 / (h * h), 1.0 / (h * h)]),
        _ => Err(Error::BadGrid(
            "finite differences cover derivative orders up to two".into(),
        )),
    }
}

/// Max over grid points of |residual| for every equation of the system, with
/// the dependent variables bound to closed forms. Derivatives are taken per
/// the grid's mode; finite differences use the interior points only.
pub fn residual_max(
    sp: &JetSpace,
    sys: &EquationSystem,
    psi: &Expr,
    w: &Expr,
    grid: &Grid1D,
    consts: &[(&str, Complex64)],
) -> Result<f64> {
    if sp.n != 1 {
        return Err(Error::BadGrid(
            "grid verification covers one spatial dimension".into(),
        ));
    }
    let sources = dep_sources(sp, psi, w)?;
    let jets = needed_jets(sys);
    let mut b = Bindings::new(sp);
    bind_consts(sp, &mut b, consts)?;

    let mut worst: f64 = 0.0;
    match grid.mode {
        DerivMode::Analytic => {
            // Differentiate the sources symbolically once, evaluate per point.
            let mut values: Vec<(JetCoord, Expr)> = Vec::with_capacity(jets.len());
            for jc in &jets {
                let src = sources.get(&jc.var).ok_or_else(|| {
                    Error::Unbound(sp.jet_name(jc))
                })?;
                let mut d = src.clone();
                for (slot, &ord) in jc.orders.iter().enumerate() {
                    let pv = match sp.deps[jc.var].base[slot] {
                        BaseSlot::Indep(i) => diff::PartialVar::Indep(i),
                        BaseSlot::Dep(_) => {
                            return Err(Error::BadGrid(
                                "grid verification covers fields over (t, x1) only".into(),
                            ))
                        }
                    };
                    for _ in 0..ord {
                        d = diff::partial(&d, &pv)?;
                    }
                }
                values.push((jc.clone(), d.canonicalize()?));
            }
            for i in 0..grid.nt {
                b.set_indep(0, Complex64::new(grid.t_at(i), 0.0));
                for j in 0..grid.nx {
                    b.set_indep(1, Complex64::new(grid.x_at(j), 0.0));
                    for (jc, e) in &values {
                        let v = b.eval(e)?;
                        b.set_jet(jc.clone(), v);
                    }
                    for eq in &sys.eqs {
                        worst = worst.max(b.eval(&eq.residual)?.norm());
                    }
                }
            }
        }
        DerivMode::Fd => {
            // Sample the sources on the full grid, then stencil the interior.
            let mut samples: BTreeMap<usize, Vec<Vec<Complex64>>> = BTreeMap::new();
            for (dep, src) in &sources {
                let mut rows = Vec::with_capacity(grid.nt);
                for i in 0..grid.nt {
                    b.set_indep(0, Complex64::new(grid.t_at(i), 0.0));
                    let mut row = Vec::with_capacity(grid.nx);
                    for j in 0..grid.nx {
                        b.set_indep(1, Complex64::new(grid.x_at(j), 0.0));
                        row.push(b.eval(src)?);
                    }
                    rows.push(row);
                }
                samples.insert(*dep, rows);
            }
            let mut stencils: Vec<(JetCoord, [f64; 3], [f64; 3])> = Vec::new();
            for jc in &jets {
                if !samples.contains_key(&jc.var) {
                    return Err(Error::Unbound(sp.jet_name(jc)));
                }
                let mut o = [0u32; 2];
                for (slot, &k) in jc.orders.iter().enumerate() {
                    match sp.deps[jc.var].base[slot] {
                        BaseSlot::Indep(i) => o[i] += k,
                        BaseSlot::Dep(_) => {
                            return Err(Error::BadGrid(
                                "grid verification covers fields over (t, x1) only".into(),
                            ))
                        }
                    }
                }
                let wt = stencil(o[0], grid.ht())?;
                let wx = stencil(o[1], grid.hx())?;
                stencils.push((jc.clone(), wt, wx));
            }
            for i in 1..grid.nt - 1 {
                b.set_indep(0, Complex64::new(grid.t_at(i), 0.0));
                for j in 1..grid.nx - 1 {
                    b.set_indep(1, Complex64::new(grid.x_at(j), 0.0));
                    for (jc, wt, wx) in &stencils {
                        let rows = &samples[&jc.var];
                        let mut v = Complex64::new(0.0, 0.0);
                        for (di, ct) in wt.iter().enumerate() {
                            if *ct == 0.0 {
                                continue;
                            }
                            for (dj, cx) in wx.iter().enumerate() {
                                if *cx == 0.0 {
                                    continue;
                                }
                                v += ct * cx * rows[i + di - 1][j + dj - 1];
                            }
                        }
                        b.set_jet(jc.clone(), v);
                    }
                    for eq in &sys.eqs {
                        worst = worst.max(b.eval(&eq.residual)?.norm());
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// Residual maxima under successive halvings of the spacing: the given grid
/// first, then `refinements` halvings. Finite-difference mode only; for a
/// smooth exact solution the residual is pure truncation error and
/// successive ratios approach 4.
pub fn convergence_order(
    sp: &JetSpace,
    sys: &EquationSystem,
    psi: &Expr,
    w: &Expr,
    grid: &Grid1D,
    consts: &[(&str, Complex64)],
    refinements: usize,
) -> Result<Vec<(f64, f64)>> {
    if grid.mode != DerivMode::Fd {
        return Err(Error::BadGrid(
            "convergence study needs finite-difference mode".into(),
        ));
    }
    if refinements < 2 {
        return Err(Error::BadGrid(
            "convergence study needs at least two refinements".into(),
        ));
    }
    let mut g = grid.clone();
    let mut out = Vec::with_capacity(refinements + 1);
    for _ in 0..=refinements {
        let r = residual_max(sp, sys, psi, w, &g, consts)?;
        out.push((g.hx(), r));
        g = g.refined();
    }
    Ok(out)
}

/// Successive residual ratios r_k / r_{k+1} of a convergence sequence.
pub fn ratios(seq: &[(f64, f64)]) -> Vec<f64> {
    seq.windows(2).map(|w| w[0].1 / w[1].1).collect()
}

/// One verification run, serialized for reports.
#[derive(Serialize, Debug)]
pub struct NumericRecord {
    pub flow: String,
    pub solution: String,
    pub mode: String,
    pub grid: String,
    pub residual_max: f64,
    pub ratios: Vec<f64>,
}

/// Named base solutions of the n = 1 equation (the last is a deliberate
/// non-solution for the flat-convergence control).
pub fn solution_keys() -> &'static [&'static str] {
    &["planewave", "zero", "constant"]
}

/// Flows the runner can push the base solutions through. `galilei` is the
/// drift flow with U1(t) = t bound; `qb` binds B(t) = sin t.
pub fn flow_keys() -> &'static [&'static str] {
    &["none", "qb", "galilei", "dilation", "projective"]
}

fn base_solution(sp: &JetSpace, key: &str) -> Result<(Expr, Expr)> {
    let (p, w) = match key {
        "planewave" => ("exp(i*(2*x1 - 4*t))", "0"),
        "zero" => ("0", "x1"),
        "constant" => ("1", "1"),
        other => {
            return Err(Error::BadKey(format!(
                "unknown solution `{}` ({})",
                other,
                solution_keys().join(", ")
            )))
        }
    };
    Ok((parse(sp, p)?, parse(sp, w)?))
}

fn runner_flow(key: &str) -> Result<Option<(flows::FlowMap, &'static str, f64)>> {
    match key {
        "none" => Ok(None),
        "qb" => {
            let f = flows::build_flow("qb", 1)?.bind_amplitude("B", "sin(s)")?;
            Ok(Some((f, "alpha", 0.8)))
        }
        "galilei" => {
            let f = flows::build_flow("qa", 1)?.bind_amplitude("U1", "s")?;
            Ok(Some((f, "beta", 0.7)))
        }
        "dilation" => Ok(Some((flows::build_flow("dilation", 1)?, "lambda", 0.4))),
        "projective" => Ok(Some((flows::build_flow("projective", 1)?, "mu", 0.3))),
        other => Err(Error::BadKey(format!(
            "unknown flow `{}` ({})",
            other,
            flow_keys().join(", ")
        ))),
    }
}

/// Push a named solution through a named flow and verify the equation on the
/// grid. Finite-difference grids run the convergence study with
/// `refinements` halvings; analytic grids report a single residual.
pub fn run_case(
    flow_key: &str,
    solution: &str,
    grid: &Grid1D,
    refinements: usize,
) -> Result<NumericRecord> {
    let flow = runner_flow(flow_key)?;
    let sp = match &flow {
        Some((f, _, _)) => f.sp.clone(),
        None => JetSpace::schrodinger(1),
    };
    let (psi0, w0) = base_solution(&sp, solution)?;
    let sys = catalog::class_system(&sp, 1, "potential class", None)?;

    let mut consts: Vec<(&str, Complex64)> = Vec::new();
    let (psi, w) = match &flow {
        None => (psi0, w0),
        Some((f, pname, pval)) => {
            consts.push((pname, Complex64::new(*pval, 0.0)));
            check_clear_of_singularities(&sp, grid, &f.domains, &consts)?;
            (f.pushforward_solution(&psi0)?, f.transform_potential(&w0)?)
        }
    };

    let (residual, rats) = match grid.mode {
        DerivMode::Analytic => {
            (residual_max(&sp, &sys, &psi, &w, grid, &consts)?, Vec::new())
        }
        DerivMode::Fd => {
            let seq = convergence_order(&sp, &sys, &psi, &w, grid, &consts, refinements)?;
            let r = seq[0].1;
            (r, ratios(&seq))
        }
    };
    Ok(NumericRecord {
        flow: flow_key.to_string(),
        solution: solution.to_string(),
        mode: grid.mode.key().to_string(),
        grid: grid.label(),
        residual_max: residual,
        ratios: rats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn undersized_or_backward_grids_are_rejected() {
        let e = Grid1D::new((0.0, 1.0), (-5.0, 5.0), 2, 201, DerivMode::Analytic);
        assert!(matches!(e, Err(Error::BadGrid(_))));
        let e = Grid1D::new((0.0, 1.0), (5.0, -5.0), 201, 201, DerivMode::Analytic);
        assert!(matches!(e, Err(Error::BadGrid(_))));
        let e = Grid1D::new((0.0, f64::INFINITY), (-5.0, 5.0), 201, 201, DerivMode::Analytic);
        assert!(matches!(e, Err(Error::BadGrid(_))));
    }

    #[test]
    fn plane_wave_is_machine_exact_in_analytic_mode() {
        let grid = Grid1D::standard(DerivMode::Analytic);
        let rec = run_case("none", "planewave", &grid, 0).unwrap();
        assert!(
            rec.residual_max <= 1e-12,
            "plane wave residual {}",
            rec.residual_max
        );
        assert!(rec.ratios.is_empty());
        assert_eq!(rec.grid, "201x201");
    }

    #[test]
    fn zero_solution_has_zero_residual() {
        let grid = Grid1D::standard(DerivMode::Analytic);
        let rec = run_case("none", "zero", &grid, 0).unwrap();
        assert_eq!(rec.residual_max, 0.0);
    }

    #[test]
    fn transported_plane_waves_stay_solutions() {
        // The symbolic layer proves these identities; here the transported
        // pair must satisfy the equation to near machine precision.
        let grid = Grid1D::standard(DerivMode::Analytic);
        for flow in ["galilei", "qb", "dilation", "projective"] {
            let rec = run_case(flow, "planewave", &grid, 0).unwrap();
            assert!(
                rec.residual_max <= 1e-10,
                "{} image residual {}",
                flow,
                rec.residual_max
            );
        }
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let grid = Grid1D::new((0.0, 1.0), (-5.0, 5.0), 41, 41, DerivMode::Fd).unwrap();
        let rec = run_case("none", "planewave", &grid, 3).unwrap();
        assert_eq!(rec.ratios.len(), 3);
        for r in &rec.ratios {
            let order = r.log2();
            assert!(
                (order - 2.0).abs() <= 0.3,
                "observed order {} from ratios {:?}",
                order,
                rec.ratios
            );
        }
    }

    #[test]
    fn a_non_solution_does_not_converge() {
        // psi = 1, W = 1: the residual is exactly W*psi = 1 at every point,
        // so refinement cannot shrink it.
        let grid = Grid1D::new((0.0, 1.0), (-5.0, 5.0), 11, 11, DerivMode::Fd).unwrap();
        let rec = run_case("none", "constant", &grid, 2).unwrap();
        assert!((rec.residual_max - 1.0).abs() <= 1e-12);
        for r in &rec.ratios {
            assert!(r.log2().abs() <= 0.3, "flat sequence expected, got {:?}", rec.ratios);
        }
    }

    #[test]
    fn grids_meeting_a_singular_set_are_vetoed() {
        let sp = JetSpace::schrodinger(1);
        let grid = Grid1D::standard(DerivMode::Analytic);
        let domain = parse(&sp, "1 - 2*t").unwrap();
        let e = check_clear_of_singularities(&sp, &grid, &[domain.clone()], &[]);
        assert!(matches!(e, Err(Error::Pole(_))));
        // The same domain clears a grid that stops before the zero.
        let safe = Grid1D::new((0.0, 0.4), (-5.0, 5.0), 11, 11, DerivMode::Analytic).unwrap();
        check_clear_of_singularities(&sp, &safe, &[domain], &[]).unwrap();
    }

    #[test]
    fn records_serialize_with_the_agreed_shape() {
        let grid = Grid1D::new((0.0, 1.0), (-5.0, 5.0), 11, 11, DerivMode::Analytic).unwrap();
        let rec = run_case("none", "planewave", &grid, 0).unwrap();
        let v = serde_json::to_value(&rec).unwrap();
        for key in ["flow", "solution", "mode", "grid", "residual_max", "ratios"] {
            assert!(v.get(key).is_some(), "missing field {}", key);
        }
        assert_eq!(v["flow"], "none");
        assert_eq!(v["mode"], "analytic");
    }

    #[test]
    fn unknown_names_are_rejected() {
        let grid = Grid1D::standard(DerivMode::Analytic);
        assert!(run_case("warp", "planewave", &grid, 0).is_err());
        assert!(run_case("none", "vortex", &grid, 0).is_err());
    }
}
