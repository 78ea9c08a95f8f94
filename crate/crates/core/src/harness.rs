//! Manufactured solutions, error norms and convergence studies.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use crate::combinatorics::{binomial, increasing_sequences, sequence_rank};
use crate::error::{FeecError, Result};
use crate::exterior::{self, AlternatingForm};
use crate::fespaces::{FeSpace, FieldOp};
use crate::mesh::{box_mesh, SimplicialMesh};
use crate::quadrature::simplex_rule;
use crate::system::{mesh_cell_measure, solve_fourth_order, DecoupledSolution, DecoupledSpaces, ProblemData, SolverConfig};

/// Highest derivative order of the generating function that fields may use.
const MAX_ORDER: usize = 8;

/// Values of `s^{(m)}(x_i)`, `s(t) = sin³(πt)`, at one point.
#[derive(Clone, Debug)]
pub struct PsiTable {
    values: Vec<[f64; MAX_ORDER + 1]>,
}

impl PsiTable {
    pub fn new(x: &[f64]) -> Self {
        use std::f64::consts::PI;
        // sin³ t = (3 sin t − sin 3t)/4
        let values = x
            .iter()
            .map(|&t| {
                let (s1, c1) = (PI * t).sin_cos();
                let (s3, c3) = (3.0 * PI * t).sin_cos();
                let mut row = [0.0; MAX_ORDER + 1];
                let (mut a1, mut a3) = (1.0, 1.0);
                for (m, r) in row.iter_mut().enumerate() {
                    // m-th derivative of sin(ωt) is ω^m sin(ωt + mπ/2)
                    let (v1, v3) = match m % 4 {
                        0 => (s1, s3),
                        1 => (c1, c3),
                        2 => (-s1, -s3),
                        _ => (-c1, -c3),
                    };
                    *r = 0.25 * (3.0 * a1 * v1 - a3 * v3);
                    a1 *= PI;
                    a3 *= 3.0 * PI;
                }
                row
            })
            .collect();
        Self { values }
    }

    fn derivative(&self, alpha: &[u8; 3]) -> f64 {
        self.values.iter().enumerate().map(|(i, row)| row[alpha[i] as usize]).product()
    }
}

/// A differential form whose components are linear combinations of partial derivatives of
/// `ψ(x) = Π_i sin³(πx_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticForm {
    pub dim: usize,
    pub degree: usize,
    /// Per component, `(coefficient, derivative multi-index)`.
    pub comps: Vec<Vec<(f64, [u8; 3])>>,
}

impl AnalyticForm {
    /// The 0-form `ψ`.
    pub fn psi(dim: usize) -> Self {
        Self { dim, degree: 0, comps: vec![vec![(1.0, [0; 3])]] }
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        Self { dim, degree, comps: vec![Vec::new(); binomial(dim, degree)] }
    }

    fn simplify(mut self) -> Self {
        for comp in &mut self.comps {
            comp.sort_by(|a, b| a.1.cmp(&b.1));
            let mut merged: Vec<(f64, [u8; 3])> = Vec::with_capacity(comp.len());
            for &(c, a) in comp.iter() {
                match merged.last_mut() {
                    Some(last) if last.1 == a => last.0 += c,
                    _ => merged.push((c, a)),
                }
            }
            merged.retain(|(c, _)| c.abs() > 1e-300);
            *comp = merged;
        }
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for comp in &mut out.comps {
            for t in comp.iter_mut() {
                t.0 *= s;
            }
        }
        out
    }

    fn partial_terms(terms: &[(f64, [u8; 3])], i: usize) -> Vec<(f64, [u8; 3])> {
        terms
            .iter()
            .map(|&(c, mut a)| {
                a[i] += 1;
                (c, a)
            })
            .collect()
    }

    /// Partial derivative of every component.
    pub fn partial(&self, i: usize) -> Self {
        Self { dim: self.dim, degree: self.degree, comps: self.comps.iter().map(|c| Self::partial_terms(c, i)).collect() }
    }

    /// Componentwise Laplacian.
    pub fn laplacian(&self) -> Self {
        let mut out = Self::zero(self.dim, self.degree);
        for i in 0..self.dim {
            let second = self.partial(i).partial(i);
            for (o, s) in out.comps.iter_mut().zip(second.comps) {
                o.extend(s);
            }
        }
        out.simplify()
    }

    pub fn exterior_derivative(&self) -> Result<Self> {
        let (d, j) = (self.dim, self.degree);
        if j >= d {
            return Err(FeecError::InvalidDegree { op: "exterior derivative", degree: j, dim: d });
        }
        let mut out = Self::zero(d, j + 1);
        for (t, tau) in increasing_sequences(d, j + 1).iter().enumerate() {
            for (pos, &i) in tau.iter().enumerate() {
                let mut rest = tau.clone();
                rest.remove(pos);
                let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
                let src = &self.comps[sequence_rank(d, &rest)];
                out.comps[t].extend(Self::partial_terms(src, i).into_iter().map(|(c, a)| (sign * c, a)));
            }
        }
        Ok(out.simplify())
    }

    fn map_linear(&self, degree: usize, f: impl Fn(&AlternatingForm) -> AlternatingForm) -> Self {
        let d = self.dim;
        let mut out = Self::zero(d, degree);
        for (s, terms) in self.comps.iter().enumerate() {
            let mut e = AlternatingForm::zero(d, self.degree);
            e.coeffs_mut()[s] = 1.0;
            let img = f(&e);
            for (t, &c) in img.coeffs().iter().enumerate() {
                if c != 0.0 {
                    out.comps[t].extend(terms.iter().map(|&(k, a)| (c * k, a)));
                }
            }
        }
        out.simplify()
    }

    pub fn hodge_star(&self) -> Self {
        self.map_linear(self.dim - self.degree, exterior::hodge_star)
    }

    pub fn hodge_star_inverse(&self) -> Self {
        self.map_linear(self.dim - self.degree, exterior::hodge_star_inverse)
    }

    /// `δω = (-1)^j ⋆⁻¹ d ⋆ ω`.
    pub fn codifferential(&self) -> Result<Self> {
        if self.degree == 0 {
            return Err(FeecError::InvalidDegree { op: "codifferential", degree: 0, dim: self.dim });
        }
        let out = self.hodge_star().exterior_derivative()?.hodge_star_inverse();
        Ok(if self.degree % 2 == 1 { out.scaled(-1.0) } else { out })
    }

    /// Cartesian gradient of each component, laid out component-major.
    pub fn gradient(&self) -> Vec<Vec<(f64, [u8; 3])>> {
        self.comps.iter().flat_map(|c| (0..self.dim).map(move |i| Self::partial_terms(c, i))).collect()
    }

    pub fn eval_with(&self, table: &PsiTable) -> Vec<f64> {
        eval_terms(&self.comps, table)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.eval_with(&PsiTable::new(x))
    }
}

fn eval_terms(comps: &[Vec<(f64, [u8; 3])>], table: &PsiTable) -> Vec<f64> {
    comps.iter().map(|terms| terms.iter().map(|(c, a)| c * table.derivative(a)).sum()).collect()
}

/// Model problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Problem {
    /// `Δ²u = f`, `j = 0`.
    Biharmonic,
    /// `-curl Δ curl u + ∇λ = f`, `div u = g`, `j = 1`, `d = 3`.
    QuadCurl,
    /// `∇ Δ div u + curl λ = f`, `j = d-1`.
    FourthDiv,
}

impl Problem {
    pub fn form_degree(self, dim: usize) -> usize {
        match self {
            Problem::Biharmonic => 0,
            Problem::QuadCurl => 1,
            Problem::FourthDiv => dim - 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Problem::Biharmonic => "biharmonic",
            Problem::QuadCurl => "quadcurl",
            Problem::FourthDiv => "fourthdiv",
        }
    }
}

impl FromStr for Problem {
    type Err = FeecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biharmonic" => Ok(Problem::Biharmonic),
            "quadcurl" => Ok(Problem::QuadCurl),
            "fourthdiv" => Ok(Problem::FourthDiv),
            other => Err(FeecError::Unsupported(format!("unknown problem {other}"))),
        }
    }
}

/// Exact fields of a manufactured solution.
#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub problem: Problem,
    pub dim: usize,
    pub j: usize,
    pub u: AnalyticForm,
    /// `φ = du`
    pub phi: AnalyticForm,
    /// `f = -δΔdu`
    pub f: AnalyticForm,
    /// `g = δu`, absent for `j = 0`.
    pub g: Option<AnalyticForm>,
}

/// Builds the manufactured solution of `problem` in dimension `dim`.
pub fn make_case(problem: Problem, dim: usize) -> Result<ManufacturedCase> {
    if !(2..=3).contains(&dim) {
        return Err(FeecError::UnsupportedDimension(dim));
    }
    let psi = AnalyticForm::psi(dim);
    let u = match problem {
        Problem::Biharmonic => psi,
        Problem::QuadCurl => {
            if dim != 3 {
                return Err(FeecError::Unsupported("the quad-curl case needs d = 3".into()));
            }
            // curl(ψ(1,1,1))
            let g = psi.exterior_derivative()?;
            let term = |i: usize, j: usize| -> Vec<(f64, [u8; 3])> {
                let mut v = g.comps[i].clone();
                v.extend(g.comps[j].iter().map(|&(c, a)| (-c, a)));
                v
            };
            AnalyticForm { dim, degree: 1, comps: vec![term(1, 2), term(2, 0), term(0, 1)] }.simplify()
        }
        Problem::FourthDiv => psi.exterior_derivative()?.hodge_star(),
    };
    let j = u.degree;
    let phi = u.exterior_derivative()?;
    let f = phi.laplacian().codifferential()?.scaled(-1.0);
    let g = if j == 0 { None } else { Some(u.codifferential()?) };
    Ok(ManufacturedCase { problem, dim, j, u, phi, f, g })
}

impl ManufacturedCase {
    /// The same case with every field multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            problem: self.problem,
            dim: self.dim,
            j: self.j,
            u: self.u.scaled(s),
            phi: self.phi.scaled(s),
            f: self.f.scaled(s),
            g: self.g.as_ref().map(|g| g.scaled(s)),
        }
    }

    pub fn solve(&self, spaces: &DecoupledSpaces, cfg: &SolverConfig) -> Result<DecoupledSolution> {
        let f = |x: &[f64]| self.f.eval(x);
        let g = |x: &[f64]| self.g.as_ref().map(|g| g.eval(x)).unwrap_or_default();
        let data = ProblemData { f: &f, g: if self.g.is_some() { Some(&g) } else { None } };
        solve_fourth_order(spaces, data, cfg)
    }
}

/// `L²` errors of one discrete solution.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorRecord {
    pub u_l2: f64,
    /// `‖d(u − u_h)‖`, the `H¹` seminorm when `j = 0`.
    pub u_h1: f64,
    pub phi_l2: f64,
    pub phi_h1: f64,
}

/// Degree of the rule used for error integrals.
pub const ERROR_QUADRATURE_DEGREE: usize = 10;

struct FieldSampler<'a> {
    space: &'a FeSpace,
    tables: Vec<crate::fespaces::LocalTable>,
}

impl<'a> FieldSampler<'a> {
    fn new(space: &'a FeSpace, op: FieldOp, rule: &crate::quadrature::SimplexRule) -> Result<Self> {
        Ok(Self { space, tables: space.tabulate_all(op, rule)? })
    }

    fn values(&self, coeffs: &[f64], c: usize, p: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if self.space.is_zero() {
            return;
        }
        let t = &self.tables[self.space.mesh.cell_class[c]];
        for (f, &g) in self.space.cell_dofs(c).iter().enumerate() {
            if FeSpace::is_constrained(g) {
                continue;
            }
            let w = coeffs[g];
            for (o, v) in out.iter_mut().zip(t.at(p, f)) {
                *o += w * v;
            }
        }
    }
}

/// Error norms of `u_h` (in `spaces.u`) and `φ_h` (in `spaces.phi`) against the exact fields.
pub fn error_norms(u_space: &FeSpace, u_h: &[f64], phi_space: &FeSpace, phi_h: &[f64], case: &ManufacturedCase) -> Result<ErrorRecord> {
    let mesh: &Arc<SimplicialMesh> = &u_space.mesh;
    let rule = simplex_rule(mesh.dim, ERROR_QUADRATURE_DEGREE);
    let su = FieldSampler::new(u_space, FieldOp::Value, &rule)?;
    let sdu = FieldSampler::new(u_space, FieldOp::D, &rule)?;
    let sphi = FieldSampler::new(phi_space, FieldOp::Value, &rule)?;
    let sgrad = FieldSampler::new(phi_space, FieldOp::Grad, &rule)?;
    let grad_phi = case.phi.gradient();
    let (nu, ndu, nphi) = (case.u.comps.len(), case.phi.comps.len(), case.phi.comps.len());
    let mut buf_u = vec![0.0; nu];
    let mut buf_du = vec![0.0; ndu];
    let mut buf_phi = vec![0.0; nphi];
    let mut buf_grad = vec![0.0; nphi * mesh.dim];
    let mut acc = [0.0f64; 4];
    let mut x = vec![0.0; mesh.dim];
    for c in 0..mesh.num_cells() {
        let vol = mesh_cell_measure(mesh, c);
        let verts = &mesh.sorted_cells[c];
        for (p, bary) in rule.points.iter().enumerate() {
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = verts.iter().zip(bary).map(|(&v, l)| l * mesh.vertices[v][k]).sum();
            }
            let table = PsiTable::new(&x);
            let w = rule.weights[p] * vol;
            su.values(u_h, c, p, &mut buf_u);
            sdu.values(u_h, c, p, &mut buf_du);
            sphi.values(phi_h, c, p, &mut buf_phi);
            sgrad.values(phi_h, c, p, &mut buf_grad);
            let sq = |exact: Vec<f64>, approx: &[f64]| exact.iter().zip(approx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            acc[0] += w * sq(case.u.eval_with(&table), &buf_u);
            acc[1] += w * sq(case.phi.eval_with(&table), &buf_du);
            acc[2] += w * sq(case.phi.eval_with(&table), &buf_phi);
            acc[3] += w * sq(eval_terms(&grad_phi, &table), &buf_grad);
        }
    }
    Ok(ErrorRecord { u_l2: acc[0].sqrt(), u_h1: acc[1].sqrt(), phi_l2: acc[2].sqrt(), phi_h1: acc[3].sqrt() })
}

/// One row of a convergence table.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord {
    pub n: usize,
    pub h: f64,
    pub errors: ErrorRecord,
    /// `max(‖λ_h‖, ‖r_h‖, ‖z_h‖) / ‖u_h‖`
    pub mult_norm_max: f64,
    pub seconds: f64,
}

/// Convergence study with observed rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub problem: String,
    pub dim: usize,
    pub k: usize,
    pub levels: Vec<LevelRecord>,
}

/// `log₂(e_{ℓ-1}/e_ℓ)` adjusted for the actual mesh-size ratio.
fn rate(prev: f64, cur: f64, h_prev: f64, h_cur: f64) -> f64 {
    (prev / cur).ln() / (h_prev / h_cur).ln()
}

pub const CSV_HEADER: &str = "n,h,err_u_l2,rate_u_l2,err_u_h1,rate_u_h1,err_phi_l2,rate_phi_l2,err_phi_h1,rate_phi_h1,mult_norm_max,seconds";

impl ConvergenceReport {
    fn errors_of(e: &ErrorRecord) -> [f64; 4] {
        [e.u_l2, e.u_h1, e.phi_l2, e.phi_h1]
    }

    /// Observed rates per level (`None` for the first level), ordered
    /// `u L², d(u), φ L², φ H¹`.
    pub fn rates(&self) -> Vec<Option<[f64; 4]>> {
        let mut out = vec![None];
        for w in self.levels.windows(2) {
            let (a, b) = (Self::errors_of(&w[0].errors), Self::errors_of(&w[1].errors));
            out.push(Some(std::array::from_fn(|i| rate(a[i], b[i], w[0].h, w[1].h))));
        }
        out.truncate(self.levels.len());
        out
    }

    /// Rates between the two finest levels.
    pub fn finest_rates(&self) -> Option<[f64; 4]> {
        self.rates().last().copied().flatten()
    }

    pub fn max_multiplier_ratio(&self) -> f64 {
        self.levels.iter().map(|l| l.mult_norm_max).fold(0.0, f64::max)
    }

    /// CSV with shortest round-trip decimal floats; rate cells are empty on the first row.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for (level, rates) in self.levels.iter().zip(self.rates()) {
            let e = Self::errors_of(&level.errors);
            let r = |i: usize| rates.map(|r| format!("{:?}", r[i])).unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{:?},{:?},{},{:?},{},{:?},{},{:?},{},{:?},{:?}",
                level.n, level.h, e[0], r(0), e[1], r(1), e[2], r(2), e[3], r(3), level.mult_norm_max, level.seconds
            );
        }
        s
    }

    /// Parses [`ConvergenceReport::to_csv`] output (metadata fields are left empty).
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(FeecError::Unsupported("unexpected CSV header".into()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| FeecError::Unsupported(format!("bad number {s}: {e}")));
        let mut levels = Vec::new();
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 12 {
                return Err(FeecError::Unsupported(format!("expected 12 fields, found {}", f.len())));
            }
            levels.push(LevelRecord {
                n: f[0].parse().map_err(|e| FeecError::Unsupported(format!("bad level {}: {e}", f[0])))?,
                h: num(f[1])?,
                errors: ErrorRecord { u_l2: num(f[2])?, u_h1: num(f[4])?, phi_l2: num(f[6])?, phi_h1: num(f[8])? },
                mult_norm_max: num(f[10])?,
                seconds: num(f[11])?,
            });
        }
        Ok(Self { problem: String::new(), dim: 0, k: 0, levels })
    }

    /// Markdown tables in the layout of the reference tables (six significant digits).
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} d={} k={}\n", self.problem, self.dim, self.k);
        let _ = writeln!(s, "| h | ‖u−u_h‖ | rate | ‖d(u−u_h)‖ | rate | ‖φ−φ_h‖ | rate | \\|φ−φ_h\\|₁ | rate |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
        for (level, rates) in self.levels.iter().zip(self.rates()) {
            let e = Self::errors_of(&level.errors);
            let r = |i: usize| rates.map(|r| format!("{:.4}", r[i])).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "| 2^-{} | {:.5e} | {} | {:.5e} | {} | {:.5e} | {} | {:.5e} | {} |",
                (level.n as f64).log2().round() as i64,
                e[0],
                r(0),
                e[1],
                r(1),
                e[2],
                r(2),
                e[3],
                r(3)
            );
        }
        s
    }
}

/// Runs the pipeline on `box_mesh(dim, n)` for each `n` in `levels`.
pub fn run_convergence(problem: Problem, dim: usize, k: usize, levels: &[usize], cfg: &SolverConfig) -> Result<ConvergenceReport> {
    let case = make_case(problem, dim)?;
    run_case(&case, k, levels, cfg)
}

/// Convergence study for an explicit case.
pub fn run_case(case: &ManufacturedCase, k: usize, levels: &[usize], cfg: &SolverConfig) -> Result<ConvergenceReport> {
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FeecError::Unsupported("levels must be strictly refining".into()));
    }
    let mut records = Vec::with_capacity(levels.len());
    for &n in levels {
        let start = Instant::now();
        let mesh = box_mesh(case.dim, n)?;
        let spaces = DecoupledSpaces::new(&mesh, k, case.j)?;
        let sol = case.solve(&spaces, cfg)?;
        let errors = error_norms(&spaces.u, &sol.u, &spaces.phi, &sol.phi, case)?;
        records.push(LevelRecord { n, h: mesh.h(), errors, mult_norm_max: sol.multiplier_ratio(), seconds: start.elapsed().as_secs_f64() });
    }
    Ok(ConvergenceReport { problem: case.problem.name().into(), dim: case.dim, k, levels: records })
}

/// Outcome of one structural check.
#[derive(Clone, Debug)]
pub struct AuditLine {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

/// Unisolvence, `d∘d = 0`, `δ∘δ = 0`, `⋆⋆` sign law, Koszul splitting, exactness on
/// `box_mesh(dim, 1)` and discrete inf-sup stability over `n ∈ {1, 2, 4}`.
pub fn run_audits(dim: usize, k: usize) -> Result<Vec<AuditLine>> {
    use crate::fespaces::exactness_audit;
    use crate::mesh::CellGeometry;
    use crate::polyforms::{build_element, check_unisolvence, koszul_decomposition_ranks, ShapeKind};
    use crate::system::infsup_probe;

    let mut lines = Vec::new();
    let geom = Arc::new(CellGeometry::reference(dim));
    for (kind, js) in [
        (ShapeKind::Full, 0..=dim),
        (ShapeKind::Trimmed, 0..=dim),
        (ShapeKind::StarTrimmed, 0..=dim),
        (ShapeKind::Phi, 0..=dim - 1),
    ] {
        for j in js {
            let e = build_element(kind, k, j, geom.clone())?;
            let rep = check_unisolvence(&e);
            lines.push(AuditLine {
                name: format!("unisolvence {kind:?} k={k} j={j}"),
                ok: rep.ok,
                detail: format!("{} dofs, condition {:.3e}", rep.num_dofs, rep.condition),
            });
        }
    }

    let mut sign_ok = true;
    for j in 0..=dim {
        for axes in increasing_sequences(dim, j) {
            let a = AlternatingForm::basis_wedge(dim, &axes);
            let back = exterior::hodge_star(&exterior::hodge_star(&a));
            sign_ok &= back.max_abs_diff(&a.scaled(exterior::double_star_sign(dim, j))) == 0.0;
        }
    }
    lines.push(AuditLine { name: "⋆⋆ = (-1)^{j(d-j)}".into(), ok: sign_ok, detail: format!("d={dim}") });

    for r in 0..=3 {
        for j in 1..dim {
            let ranks = koszul_decomposition_ranks(dim, r, j);
            lines.push(AuditLine {
                name: format!("Koszul splitting r={r} j={j}"),
                ok: ranks.holds(),
                detail: format!("{} + {} = {} (combined {})", ranks.koszul, ranks.codifferential, ranks.full, ranks.combined),
            });
        }
    }

    let mesh = box_mesh(dim, 1)?;
    for j in 0..=dim {
        let rep = exactness_audit(&mesh, k, j)?;
        lines.push(AuditLine {
            name: format!("d∘d = 0, δ∘δ = 0 j={j}"),
            ok: rep.composition_defect <= 1e-10,
            detail: format!("max entry {:.1e}", rep.composition_defect),
        });
        for c in &rep.checks {
            lines.push(AuditLine {
                name: format!("exactness {}", c.label),
                ok: c.ok,
                detail: format!("dim {}, kernel {}, range {}", c.space_dim, c.kernel_dim, c.range_rank),
            });
        }
    }

    let j = dim - 2;
    let betas: Vec<f64> = [1, 2, 4]
        .iter()
        .map(|&n| infsup_probe(&box_mesh(dim, n)?, k, j).map(|b| b.unwrap_or(0.0)))
        .collect::<Result<_>>()?;
    lines.push(AuditLine {
        name: format!("inf-sup j={j} n=1,2,4"),
        ok: betas[2] >= 0.5 * betas[0] && betas[2] > 0.0,
        detail: format!("β_h = {:.4}, {:.4}, {:.4}", betas[0], betas[1], betas[2]),
    });
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_derivatives_match_finite_differences() {
        let x = [0.31, 0.62, 0.17];
        let t = PsiTable::new(&x);
        let h = 1e-4;
        for m in 0..3 {
            let mut a = [0u8; 3];
            a[0] = m;
            let mut b = a;
            b[0] += 1;
            let plus = PsiTable::new(&[x[0] + h, x[1], x[2]]).derivative(&a);
            let minus = PsiTable::new(&[x[0] - h, x[1], x[2]]).derivative(&a);
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - t.derivative(&b)).abs() < 1e-5 * (1.0 + fd.abs()), "m={m}");
        }
    }

    #[test]
    fn center_value() {
        let case = make_case(Problem::Biharmonic, 3).unwrap();
        assert!((case.u.eval(&[0.5, 0.5, 0.5])[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn codifferential_is_minus_divergence() {
        let psi = AnalyticForm::psi(3);
        let grad = psi.exterior_derivative().unwrap();
        let lap = psi.laplacian();
        let delta = grad.codifferential().unwrap();
        let x = [0.2, 0.7, 0.4];
        assert!((delta.eval(&x)[0] + lap.eval(&x)[0]).abs() < 1e-10);
    }

    #[test]
    fn data_constraints_hold() {
        for (p, d) in [(Problem::Biharmonic, 2), (Problem::Biharmonic, 3), (Problem::QuadCurl, 3), (Problem::FourthDiv, 2), (Problem::FourthDiv, 3)] {
            let case = make_case(p, d).unwrap();
            let x = [0.23, 0.61, 0.37];
            if case.j > 0 {
                assert!(case.f.codifferential().unwrap().eval(&x[..d]).iter().all(|v| v.abs() < 1e-8));
                assert!(case.g.as_ref().unwrap().eval(&x[..d]).iter().all(|v| v.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let rep = ConvergenceReport {
            problem: "biharmonic".into(),
            dim: 3,
            k: 1,
            levels: vec![
                LevelRecord { n: 2, h: 3f64.sqrt() / 2.0, errors: ErrorRecord { u_l2: 0.1, u_h1: 1.0 / 3.0, phi_l2: 2.5, phi_h1: 11.0 }, mult_norm_max: 1e-17, seconds: 0.25 },
                LevelRecord { n: 4, h: 3f64.sqrt() / 4.0, errors: ErrorRecord { u_l2: 0.03, u_h1: 0.1, phi_l2: 0.9, phi_h1: 6.1 }, mult_norm_max: 0.0, seconds: 1.5 },
            ],
        };
        let csv = rep.to_csv();
        let back = ConvergenceReport::from_csv(&csv).unwrap();
        assert_eq!(back.levels, rep.levels);
        assert!(csv.lines().nth(1).unwrap().contains(",,"));
    }
}
