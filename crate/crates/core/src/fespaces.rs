//! Global conforming finite element spaces, degree-of-freedom maps, the diagonal discrete
//! inner product, DoF-level operator matrices and exactness audits.
//!
//! Every cell builds its element on its vertices in ascending global order, so the functionals
//! attached to a shared sub-simplex coincide in all cells containing it and the local-to-global
//! map carries no signs.

use std::collections::HashMap;
use std::sync::Arc;

use crate::combinatorics::{binomial, sequence_rank};
use crate::error::{FeecError, Result};
use crate::linalg::{dense_rank, CsrMatrix, TripletBuilder};
use crate::mesh::SimplicialMesh;
use crate::polyforms::{self, build_element, PolynomialForm, ShapeBasis, ShapeKind};
use crate::quadrature::{simplex_rule, SimplexRule};

/// Family of a global space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpaceKind {
    /// `V^d_k Λ^j = P_kΛ^j(T_h) ∩ HΛ^j`.
    Full,
    /// `V^{d,-}_k Λ^j`.
    Trimmed,
    /// `V^{δ,-}_k Λ^j = ⋆ V^{d,-}_k Λ^{d-j}`.
    StarTrimmed,
    /// The bubble-enriched `H^1`-conforming space `Φ_h`.
    Phi,
    /// The real line, used as the top space of the `δ` sequence; its element `1` has `δ1 = vol`.
    Constants,
    /// The zero space.
    Zero,
}

/// Differential operator applied to basis functions before integration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldOp {
    Value,
    D,
    Codiff,
    /// Cartesian gradient of every component.
    Grad,
}

const NONE: usize = usize::MAX;

/// A global finite element space.
#[derive(Debug)]
pub struct FeSpace {
    pub kind: SpaceKind,
    pub k: usize,
    /// Form degree of the members.
    pub form_degree: usize,
    pub mesh: Arc<SimplicialMesh>,
    pub homogeneous: bool,
    pub num_dofs: usize,
    /// Number of local basis functions per cell.
    pub local_dim: usize,
    /// Element per translation class of cells.
    pub elements: Vec<Arc<ShapeBasis>>,
    cell_dofs: Vec<usize>,
    /// `(sub-simplex dimension, sub-simplex id)` carrying each global DoF.
    pub dof_location: Vec<(usize, usize)>,
    /// DoFs attached to boundary sub-simplices (all false for homogeneous spaces, whose
    /// boundary DoFs are removed).
    pub boundary_mask: Vec<bool>,
    /// Members are additionally constrained to have zero mean (imposed by a multiplier).
    pub mean_value_constraint: bool,
}

impl FeSpace {
    fn empty(kind: SpaceKind, k: usize, form_degree: usize, mesh: Arc<SimplicialMesh>, homogeneous: bool) -> Self {
        Self {
            kind,
            k,
            form_degree,
            mesh,
            homogeneous,
            num_dofs: 0,
            local_dim: 0,
            elements: Vec::new(),
            cell_dofs: Vec::new(),
            dof_location: Vec::new(),
            boundary_mask: Vec::new(),
            mean_value_constraint: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim
    }

    pub fn is_zero(&self) -> bool {
        self.num_dofs == 0
    }

    /// Global indices of the local basis functions of cell `c`; `usize::MAX` marks a removed
    /// boundary function.
    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        &self.cell_dofs[c * self.local_dim..(c + 1) * self.local_dim]
    }

    pub fn is_constrained(index: usize) -> bool {
        index == NONE
    }

    pub fn element(&self, c: usize) -> &ShapeBasis {
        &self.elements[self.mesh.cell_class[c]]
    }

    /// Local coefficient vector of a global function on cell `c`.
    pub fn local_coefficients(&self, coeffs: &[f64], c: usize) -> Vec<f64> {
        self.cell_dofs(c).iter().map(|&g| if g == NONE { 0.0 } else { coeffs[g] }).collect()
    }

    /// Number of components of `op` applied to members.
    pub fn op_components(&self, op: FieldOp) -> Result<usize> {
        let d = self.dim();
        let j = self.form_degree;
        match self.kind {
            SpaceKind::Zero => Ok(0),
            SpaceKind::Constants => match op {
                FieldOp::Value | FieldOp::Codiff => Ok(1),
                _ => Err(FeecError::Unsupported(format!("{op:?} on the constants space"))),
            },
            _ => match op {
                FieldOp::Value => Ok(binomial(d, j)),
                FieldOp::D if j < d => Ok(binomial(d, j + 1)),
                FieldOp::Codiff if j > 0 => Ok(binomial(d, j - 1)),
                FieldOp::Grad => Ok(binomial(d, j) * d),
                _ => Err(FeecError::InvalidDegree { op: "field operator", degree: j, dim: d }),
            },
        }
    }

    /// Polynomial degree bound of `op` applied to members.
    pub fn op_degree(&self, op: FieldOp) -> usize {
        match self.kind {
            SpaceKind::Zero | SpaceKind::Constants => 0,
            _ => {
                let base = self.elements.iter().flat_map(|e| e.functions.iter().map(PolynomialForm::poly_degree)).max().unwrap_or(0);
                match op {
                    FieldOp::Value => base,
                    _ => base.saturating_sub(1),
                }
            }
        }
    }

    /// Symbolic image of the local basis of class `class` under `op`, one entry per component
    /// layout (for `Grad`, components are `σ`-major, then axis).
    fn derived_functions(&self, class: usize, op: FieldOp) -> Result<Vec<Vec<polyforms::BaryPoly>>> {
        let elem = &self.elements[class];
        let mut out = Vec::with_capacity(elem.len());
        for f in &elem.functions {
            let comps = match op {
                FieldOp::Value => f.components().to_vec(),
                FieldOp::D => polyforms::exterior_derivative(f)?.components().to_vec(),
                FieldOp::Codiff => polyforms::codifferential(f)?.components().to_vec(),
                FieldOp::Grad => (0..f.components().len()).flat_map(|s| f.component_gradient(s)).collect(),
            };
            out.push(comps);
        }
        Ok(out)
    }

    /// Values of `op` applied to the local basis of a cell class at the points of `rule`.
    pub fn tabulate(&self, class: usize, op: FieldOp, rule: &SimplexRule) -> Result<LocalTable> {
        let ncomp = self.op_components(op)?;
        let npts = rule.len();
        match self.kind {
            SpaceKind::Zero => Ok(LocalTable { ncomp, nfun: 0, npts, values: Vec::new() }),
            SpaceKind::Constants => Ok(LocalTable { ncomp: 1, nfun: 1, npts, values: vec![1.0; npts] }),
            _ => {
                let derived = self.derived_functions(class, op)?;
                let nfun = derived.len();
                let mut values = vec![0.0; npts * nfun * ncomp];
                for (p, bary) in rule.points.iter().enumerate() {
                    for (f, comps) in derived.iter().enumerate() {
                        for (c, poly) in comps.iter().enumerate() {
                            values[(p * nfun + f) * ncomp + c] = poly.eval(bary);
                        }
                    }
                }
                Ok(LocalTable { ncomp, nfun, npts, values })
            }
        }
    }

    /// Tables for every class.
    pub fn tabulate_all(&self, op: FieldOp, rule: &SimplexRule) -> Result<Vec<LocalTable>> {
        let nclass = self.mesh.num_classes();
        (0..nclass)
            .map(|c| if self.kind == SpaceKind::Constants || self.kind == SpaceKind::Zero { self.tabulate(0, op, rule) } else { self.tabulate(c, op, rule) })
            .collect()
    }
}

/// Values of local basis functions (after an operator) at quadrature points.
#[derive(Clone, Debug)]
pub struct LocalTable {
    pub ncomp: usize,
    pub nfun: usize,
    pub npts: usize,
    /// Indexed `(point * nfun + function) * ncomp + component`.
    pub values: Vec<f64>,
}

impl LocalTable {
    pub fn at(&self, point: usize, function: usize) -> &[f64] {
        let start = (point * self.nfun + function) * self.ncomp;
        &self.values[start..start + self.ncomp]
    }
}

/// Builds a global space. For [`SpaceKind::Phi`] the index `j` is that of the problem, so members
/// are `(j+1)`-forms; for the other kinds members are `j`-forms. Requests for form degrees outside
/// `0..=d` return the zero space.
pub fn build_space(kind: SpaceKind, k: usize, j: usize, mesh: Arc<SimplicialMesh>, homogeneous: bool) -> Result<Arc<FeSpace>> {
    let d = mesh.dim;
    if kind == SpaceKind::Zero {
        return Ok(Arc::new(FeSpace::empty(kind, k, j, mesh, homogeneous)));
    }
    if kind == SpaceKind::Constants {
        let nc = mesh.num_cells();
        let mut s = FeSpace::empty(kind, k, d + 1, mesh, false);
        s.num_dofs = 1;
        s.local_dim = 1;
        s.cell_dofs = vec![0; nc];
        s.dof_location = vec![(d, 0)];
        s.boundary_mask = vec![false];
        return Ok(Arc::new(s));
    }
    if k == 0 && kind != SpaceKind::Full {
        return Err(FeecError::Unsupported(format!("{kind:?} spaces need k ≥ 1")));
    }
    let form_degree = if kind == SpaceKind::Phi { j + 1 } else { j };
    if form_degree > d {
        return Ok(Arc::new(FeSpace::empty(SpaceKind::Zero, k, form_degree, mesh, homogeneous)));
    }
    let shape_kind = match kind {
        SpaceKind::Full => ShapeKind::Full,
        SpaceKind::Trimmed => ShapeKind::Trimmed,
        SpaceKind::StarTrimmed => ShapeKind::StarTrimmed,
        SpaceKind::Phi => ShapeKind::Phi,
        SpaceKind::Constants | SpaceKind::Zero => unreachable!(),
    };
    let mut elements = Vec::with_capacity(mesh.num_classes());
    for &rep in &mesh.class_representative {
        elements.push(Arc::new(build_element(shape_kind, k, j, Arc::new(mesh.geometry(rep)))?));
    }
    let local_dim = elements[0].len();

    // (sub-simplex dimension, local face rank, index within face) per local DoF
    let mut placement = Vec::with_capacity(local_dim);
    let mut per_face_count = vec![0usize; d + 1];
    {
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for dof in &elements[0].dofs {
            let l = dof.face_dim();
            let rank = sequence_rank(d + 1, &dof.face);
            let idx = seen.entry((l, rank)).or_insert(0);
            placement.push((l, rank, *idx));
            *idx += 1;
            per_face_count[l] = per_face_count[l].max(*idx);
        }
    }
    for e in &elements[1..] {
        if e.len() != local_dim {
            return Err(FeecError::InvariantViolation("elements of different classes disagree in size".into()));
        }
    }

    let mut slots: Vec<Vec<usize>> = Vec::with_capacity(d + 1);
    let mut offsets = Vec::with_capacity(d + 1);
    let mut total = 0usize;
    for l in 0..=d {
        let count = mesh.count(l);
        let mut slot = vec![NONE; count];
        let mut used = 0;
        for (f, s) in slot.iter_mut().enumerate() {
            let boundary = l < d && mesh.faces[l].boundary[f];
            if !(homogeneous && boundary) {
                *s = used;
                used += 1;
            }
        }
        offsets.push(total);
        total += used * per_face_count[l];
        slots.push(slot);
    }

    let nc = mesh.num_cells();
    let mut cell_dofs = vec![NONE; nc * local_dim];
    let mut dof_location = vec![(0, 0); total];
    let mut boundary_mask = vec![false; total];
    for c in 0..nc {
        for (i, &(l, rank, idx)) in placement.iter().enumerate() {
            let face = if l == d { c } else { mesh.cell_faces[l][c][rank] };
            let slot = slots[l][face];
            if slot == NONE {
                continue;
            }
            let g = offsets[l] + slot * per_face_count[l] + idx;
            cell_dofs[c * local_dim + i] = g;
            dof_location[g] = (l, face);
            boundary_mask[g] = l < d && mesh.faces[l].boundary[face];
        }
    }
    let mean_value_constraint = kind == SpaceKind::Phi && j + 1 == d;
    Ok(Arc::new(FeSpace {
        kind,
        k,
        form_degree,
        mesh,
        homogeneous,
        num_dofs: total,
        local_dim,
        elements,
        cell_dofs,
        dof_location,
        boundary_mask,
        mean_value_constraint,
    }))
}

/// The inner product `⟨η, μ⟩_D = Σ η_i μ_i ‖φ_i‖²` whose matrix is the diagonal of the mass matrix.
#[derive(Clone, Debug)]
pub struct DiagonalInnerProduct {
    pub weights: Vec<f64>,
}

impl DiagonalInnerProduct {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights.iter().zip(a).zip(b).map(|((w, x), y)| w * x * y).sum()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    pub fn matrix(&self) -> CsrMatrix {
        CsrMatrix::diagonal(&self.weights)
    }
}

/// Squared `L²` norms of the global basis functions.
pub fn diagonal_inner(space: &FeSpace) -> Result<DiagonalInnerProduct> {
    let mesh = &space.mesh;
    match space.kind {
        SpaceKind::Zero => return Ok(DiagonalInnerProduct { weights: Vec::new() }),
        SpaceKind::Constants => {
            let vol: f64 = (0..mesh.num_cells()).map(|c| mesh.geometry(c).measure).sum();
            return Ok(DiagonalInnerProduct { weights: vec![vol] });
        }
        _ => {}
    }
    let rule = simplex_rule(mesh.dim, 2 * space.op_degree(FieldOp::Value));
    let tables = space.tabulate_all(FieldOp::Value, &rule)?;
    let local_norms: Vec<Vec<f64>> = tables
        .iter()
        .map(|t| {
            (0..t.nfun)
                .map(|f| (0..t.npts).map(|p| rule.weights[p] * t.at(p, f).iter().map(|v| v * v).sum::<f64>()).sum())
                .collect()
        })
        .collect();
    let mut weights = vec![0.0; space.num_dofs];
    for c in 0..mesh.num_cells() {
        let vol = mesh.geometry(c).measure;
        let norms = &local_norms[mesh.cell_class[c]];
        for (i, &g) in space.cell_dofs(c).iter().enumerate() {
            if g != NONE {
                weights[g] += vol * norms[i];
            }
        }
    }
    if let Some(w) = weights.iter().find(|w| **w <= 0.0) {
        return Err(FeecError::InvariantViolation(format!("nonpositive diagonal weight {w}")));
    }
    Ok(DiagonalInnerProduct { weights })
}

/// Matrix of `op: source → target` in the DoF coordinates of `target`:
/// `G[b][a] = ℓ_b(op φ_a)`. Exact when `op(source) ⊂ target`.
pub fn dof_operator_matrix(source: &FeSpace, target: &FeSpace, op: FieldOp) -> Result<CsrMatrix> {
    if !Arc::ptr_eq(&source.mesh, &target.mesh) {
        return Err(FeecError::Mesh("spaces live on different meshes".into()));
    }
    let mesh = &source.mesh;
    let mut entries: HashMap<(usize, usize), f64> = HashMap::new();
    if source.is_zero() || target.is_zero() {
        return Ok(CsrMatrix::zeros(target.num_dofs, source.num_dofs));
    }
    if source.kind == SpaceKind::Constants {
        // δ1 = vol: apply target DoFs to the constant volume form
        if op != FieldOp::Codiff {
            return Err(FeecError::Unsupported("only δ is defined on the constants space".into()));
        }
        for c in 0..mesh.num_cells() {
            let elem = target.element(c);
            let vol = PolynomialForm::constant(elem.geometry.clone(), &crate::exterior::AlternatingForm::volume(mesh.dim));
            for (b, dof) in elem.dofs.iter().enumerate() {
                let gb = target.cell_dofs(c)[b];
                if gb != NONE {
                    entries.insert((gb, 0), dof.apply(&vol));
                }
            }
        }
    } else {
        let nclass = mesh.num_classes();
        let mut local: Vec<Vec<Vec<f64>>> = Vec::with_capacity(nclass);
        for class in 0..nclass {
            let src = &source.elements[class];
            let tgt = &target.elements[class];
            let images: Vec<PolynomialForm> = src
                .functions
                .iter()
                .map(|f| match op {
                    FieldOp::D => polyforms::exterior_derivative(f),
                    FieldOp::Codiff => polyforms::codifferential(f),
                    FieldOp::Value => Ok(f.clone()),
                    FieldOp::Grad => Err(FeecError::Unsupported("gradient is not a form operator".into())),
                })
                .collect::<Result<_>>()?;
            local.push(tgt.dofs.iter().map(|dof| images.iter().map(|g| dof.apply(g)).collect()).collect());
        }
        for c in 0..mesh.num_cells() {
            let m = &local[mesh.cell_class[c]];
            let rows = target.cell_dofs(c);
            let cols = source.cell_dofs(c);
            for (b, &gb) in rows.iter().enumerate() {
                if gb == NONE {
                    continue;
                }
                for (a, &ga) in cols.iter().enumerate() {
                    if ga != NONE {
                        entries.insert((gb, ga), m[b][a]);
                    }
                }
            }
        }
    }
    let mut b = TripletBuilder::with_capacity(target.num_dofs, source.num_dofs, entries.len());
    let mut sorted: Vec<_> = entries.into_iter().collect();
    sorted.sort_by(|x, y| x.0.cmp(&y.0));
    for ((r, c), v) in sorted {
        if v.abs() > 1e-12 {
            b.push(r, c, v);
        }
    }
    Ok(b.build())
}

/// One rank identity of an exactness audit.
#[derive(Clone, Debug)]
pub struct ExactnessCheck {
    pub label: String,
    pub space_dim: usize,
    pub kernel_dim: usize,
    pub range_rank: usize,
    /// Expected `kernel_dim - range_rank` (the constants at the top of the boundary-condition
    /// sequence, zero elsewhere).
    pub cohomology: usize,
    pub ok: bool,
}

/// Rank identities plus composition checks for one `(k, j)`.
#[derive(Clone, Debug)]
pub struct ExactnessReport {
    pub k: usize,
    pub j: usize,
    pub checks: Vec<ExactnessCheck>,
    /// Largest entry of `d∘d` (or `δ∘δ`) at the matrix level.
    pub composition_defect: f64,
    pub ok: bool,
}

fn kernel_dim(op: &CsrMatrix, n: usize) -> usize {
    if op.nrows == 0 {
        return n;
    }
    n - dense_rank(&op.to_dense(), 1e-10)
}

fn check(label: String, space: &FeSpace, op_out: Option<&CsrMatrix>, op_in: Option<&CsrMatrix>, cohomology: usize) -> ExactnessCheck {
    let n = space.num_dofs;
    let kernel = match op_out {
        Some(m) => kernel_dim(m, n),
        None => n,
    };
    let range = match op_in {
        Some(m) if m.nrows > 0 && m.ncols > 0 => dense_rank(&m.to_dense(), 1e-10),
        _ => 0,
    };
    ExactnessCheck { label, space_dim: n, kernel_dim: kernel, range_rank: range, cohomology, ok: kernel == range + cohomology }
}

/// Verifies, by dense rank computations, that
/// `ker d|V̊^d_kΛ^j = d V̊^{d,-}_{k+1}Λ^{j-1}`, `ker d|V̊^{d,-}_kΛ^j = d V̊^{d,-}_kΛ^{j-1}` and
/// `ker δ|V^{δ,-}_kΛ^j = δ V^{δ,-}_kΛ^{j+1}` (the constants standing in for `V^{δ,-}Λ^{d+1}`;
/// at `j = d` the first two identities hold modulo the constants),
/// together with `d∘d = 0` and `δ∘δ = 0` at the matrix level.
pub fn exactness_audit(mesh: &Arc<SimplicialMesh>, k: usize, j: usize) -> Result<ExactnessReport> {
    let d = mesh.dim;
    if j > d {
        return Err(FeecError::InvalidDegree { op: "exactness audit", degree: j, dim: d });
    }
    let mut checks = Vec::new();
    let mut composition_defect: f64 = 0.0;
    // d maps V̊Λ^{d-1} onto the top forms of zero mean only
    let top = usize::from(j == d);

    // full-space sequence
    let full = build_space(SpaceKind::Full, k, j, mesh.clone(), true)?;
    let d_out = if j < d {
        let tgt = build_space(SpaceKind::Trimmed, k, j + 1, mesh.clone(), true)?;
        Some(dof_operator_matrix(&full, &tgt, FieldOp::D)?)
    } else {
        None
    };
    let d_in = if j > 0 {
        let src = build_space(SpaceKind::Trimmed, k + 1, j - 1, mesh.clone(), true)?;
        Some(dof_operator_matrix(&src, &full, FieldOp::D)?)
    } else {
        None
    };
    if let (Some(a), Some(b)) = (&d_out, &d_in) {
        composition_defect = composition_defect.max(a.mul(b).max_abs());
    }
    checks.push(check(format!("ker d on V̊^d_{k}Λ^{j} = d V̊^(d,-)_{}Λ^{}", k + 1, j as isize - 1), &full, d_out.as_ref(), d_in.as_ref(), top));

    // trimmed sequence
    let trimmed = build_space(SpaceKind::Trimmed, k, j, mesh.clone(), true)?;
    let t_out = if j < d {
        let tgt = build_space(SpaceKind::Trimmed, k, j + 1, mesh.clone(), true)?;
        Some(dof_operator_matrix(&trimmed, &tgt, FieldOp::D)?)
    } else {
        None
    };
    let t_in = if j > 0 {
        let src = build_space(SpaceKind::Trimmed, k, j - 1, mesh.clone(), true)?;
        Some(dof_operator_matrix(&src, &trimmed, FieldOp::D)?)
    } else {
        None
    };
    if let (Some(a), Some(b)) = (&t_out, &t_in) {
        composition_defect = composition_defect.max(a.mul(b).max_abs());
    }
    checks.push(check(format!("ker d on V̊^(d,-)_{k}Λ^{j} = d V̊^(d,-)_{k}Λ^{}", j as isize - 1), &trimmed, t_out.as_ref(), t_in.as_ref(), top));

    // δ sequence
    let star = build_space(SpaceKind::StarTrimmed, k, j, mesh.clone(), false)?;
    let s_out = if j > 0 {
        let tgt = build_space(SpaceKind::StarTrimmed, k, j - 1, mesh.clone(), false)?;
        Some(dof_operator_matrix(&star, &tgt, FieldOp::Codiff)?)
    } else {
        None
    };
    let s_in = if j < d {
        let src = build_space(SpaceKind::StarTrimmed, k, j + 1, mesh.clone(), false)?;
        Some(dof_operator_matrix(&src, &star, FieldOp::Codiff)?)
    } else {
        let src = build_space(SpaceKind::Constants, k, d + 1, mesh.clone(), false)?;
        Some(dof_operator_matrix(&src, &star, FieldOp::Codiff)?)
    };
    if let (Some(a), Some(b)) = (&s_out, &s_in) {
        composition_defect = composition_defect.max(a.mul(b).max_abs());
    }
    checks.push(check(format!("ker δ on V^(δ,-)_{k}Λ^{j} = δ V^(δ,-)_{k}Λ^{}", j + 1), &star, s_out.as_ref(), s_in.as_ref(), 0));

    let ok = checks.iter().all(|c| c.ok) && composition_defect <= 1e-10;
    Ok(ExactnessReport { k, j, checks, composition_defect, ok })
}

/// Quadrature rule adequate for products of `op_a` on `a` and `op_b` on `b`.
pub fn product_rule(a: &FeSpace, op_a: FieldOp, b: &FeSpace, op_b: FieldOp) -> Arc<SimplexRule> {
    simplex_rule(a.dim(), a.op_degree(op_a) + b.op_degree(op_b))
}
