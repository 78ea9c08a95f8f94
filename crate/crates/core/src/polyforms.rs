//! Polynomial differential forms on a simplex in barycentric coordinates, the full and
//! trimmed polynomial spaces, the bubble-enriched space `Φ_k`, their degrees of freedom and
//! dual bases.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::combinatorics::{binomial, increasing_sequences, multi_indices, sequence_rank};
use crate::error::{FeecError, Result};
use crate::exterior::{self, AlternatingForm};
use crate::mesh::CellGeometry;
use crate::quadrature::simplex_rule;

/// Exponents of `λ_0 … λ_3`.
pub type Exps = [u8; 4];

/// A polynomial in the barycentric coordinates `λ_0, …, λ_{nvars-1}`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BaryPoly {
    nvars: usize,
    terms: BTreeMap<Exps, f64>,
}

impl BaryPoly {
    pub fn zero(nvars: usize) -> Self {
        Self { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert([0; 4], c);
        }
        p
    }

    pub fn monomial(nvars: usize, exps: &[u8], c: f64) -> Self {
        let mut e = [0u8; 4];
        e[..exps.len()].copy_from_slice(exps);
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(e, c);
        }
        p
    }

    /// The coordinate `λ_i`.
    pub fn lambda(nvars: usize, i: usize) -> Self {
        let mut e = [0u8; 4];
        e[i] = 1;
        Self::monomial(nvars, &e[..nvars], 1.0)
    }

    /// `λ_0 λ_1 ⋯ λ_d`.
    pub fn bubble(nvars: usize) -> Self {
        Self::monomial(nvars, &vec![1; nvars], 1.0)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exps, &f64)> {
        self.terms.iter()
    }

    /// Largest total degree among the stored monomials (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.terms.keys().map(|e| e.iter().map(|&x| x as usize).sum()).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.values().all(|c| *c == 0.0)
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        if s == 0.0 {
            return;
        }
        for (e, c) in &other.terms {
            let slot = self.terms.entry(*e).or_insert(0.0);
            *slot += s * c;
            if *slot == 0.0 {
                self.terms.remove(e);
            }
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut p = Self::zero(self.nvars);
        p.add_scaled(self, s);
        p
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut p = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let mut e = [0u8; 4];
                for i in 0..4 {
                    e[i] = ea[i] + eb[i];
                }
                *p.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        p.terms.retain(|_, c| *c != 0.0);
        p
    }

    /// `∂/∂λ_m`, treating the coordinates as independent.
    pub fn diff(&self, m: usize) -> Self {
        let mut p = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[m] == 0 {
                continue;
            }
            let mut f = *e;
            f[m] -= 1;
            *p.terms.entry(f).or_insert(0.0) += c * e[m] as f64;
        }
        p.terms.retain(|_, c| *c != 0.0);
        p
    }

    pub fn eval(&self, bary: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mut v = *c;
                for (i, &x) in bary.iter().enumerate().take(self.nvars) {
                    for _ in 0..e[i] {
                        v *= x;
                    }
                }
                v
            })
            .sum()
    }
}

/// A differential form on a simplex with barycentric-polynomial coefficients on the
/// Cartesian basis `dx_σ`.
#[derive(Clone, Debug)]
pub struct PolynomialForm {
    geometry: Arc<CellGeometry>,
    degree: usize,
    comps: Vec<BaryPoly>,
}

impl PolynomialForm {
    pub fn zero(geometry: Arc<CellGeometry>, degree: usize) -> Self {
        let nv = geometry.dim + 1;
        let n = binomial(geometry.dim, degree);
        Self { geometry, degree, comps: vec![BaryPoly::zero(nv); n] }
    }

    pub fn from_components(geometry: Arc<CellGeometry>, degree: usize, comps: Vec<BaryPoly>) -> Result<Self> {
        let dim = geometry.dim;
        if degree > dim {
            return Err(FeecError::InvalidDegree { op: "polynomial form", degree, dim });
        }
        if comps.len() != binomial(dim, degree) {
            return Err(FeecError::OutOfRange { index: comps.len(), limit: binomial(dim, degree) });
        }
        Ok(Self { geometry, degree, comps })
    }

    /// Scalar polynomial times a constant alternating form.
    pub fn from_poly_times(geometry: Arc<CellGeometry>, p: &BaryPoly, a: &AlternatingForm) -> Self {
        let mut out = Self::zero(geometry, a.degree());
        for (slot, &c) in out.comps.iter_mut().zip(a.coeffs()) {
            slot.add_scaled(p, c);
        }
        out
    }

    pub fn constant(geometry: Arc<CellGeometry>, a: &AlternatingForm) -> Self {
        let nv = geometry.dim + 1;
        Self::from_poly_times(geometry, &BaryPoly::constant(nv, 1.0), a)
    }

    pub fn geometry(&self) -> &Arc<CellGeometry> {
        &self.geometry
    }

    pub fn dim(&self) -> usize {
        self.geometry.dim
    }

    /// Form degree `j`.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn components(&self) -> &[BaryPoly] {
        &self.comps
    }

    /// Polynomial degree bound.
    pub fn poly_degree(&self) -> usize {
        self.comps.iter().map(BaryPoly::degree).max().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(BaryPoly::is_zero)
    }

    pub fn eval(&self, bary: &[f64]) -> AlternatingForm {
        let coeffs = self.comps.iter().map(|p| p.eval(bary)).collect();
        AlternatingForm::from_coeffs(self.dim(), self.degree, coeffs).expect("consistent sizes")
    }

    pub fn add_scaled(&mut self, other: &Self, s: f64) {
        for (a, b) in self.comps.iter_mut().zip(&other.comps) {
            a.add_scaled(b, s);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            geometry: self.geometry.clone(),
            degree: self.degree,
            comps: self.comps.iter().map(|p| p.scaled(s)).collect(),
        }
    }

    pub fn mul_poly(&self, p: &BaryPoly) -> Self {
        Self {
            geometry: self.geometry.clone(),
            degree: self.degree,
            comps: self.comps.iter().map(|c| c.mul(p)).collect(),
        }
    }

    /// Cartesian partial derivative of a scalar coefficient.
    fn partial(&self, p: &BaryPoly, axis: usize) -> BaryPoly {
        let mut out = BaryPoly::zero(p.nvars());
        for (m, g) in self.geometry.grads.iter().enumerate() {
            out.add_scaled(&p.diff(m), g[axis]);
        }
        out
    }

    /// Gradient of component `σ` (by lexicographic rank) as `d` scalar polynomials.
    pub fn component_gradient(&self, sigma: usize) -> Vec<BaryPoly> {
        (0..self.dim()).map(|i| self.partial(&self.comps[sigma], i)).collect()
    }

    /// Max over coefficients of the difference of values at a set of barycentric points.
    pub fn max_diff_at(&self, other: &Self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .map(|p| self.eval(p).max_abs_diff(&other.eval(p)))
            .fold(0.0, f64::max)
    }
}

/// Exterior derivative `dω = Σ_σ Σ_i ∂_i ω_σ dx_i ∧ dx_σ`.
pub fn exterior_derivative(p: &PolynomialForm) -> Result<PolynomialForm> {
    let dim = p.dim();
    let j = p.degree;
    if j >= dim {
        return Err(FeecError::InvalidDegree { op: "exterior derivative", degree: j, dim });
    }
    let mut out = PolynomialForm::zero(p.geometry.clone(), j + 1);
    for (s, sigma) in increasing_sequences(dim, j).iter().enumerate() {
        if p.comps[s].is_zero() {
            continue;
        }
        for i in 0..dim {
            let mut axes = vec![i];
            axes.extend_from_slice(sigma);
            let basis = AlternatingForm::basis_wedge(dim, &axes);
            if basis.is_zero(0.0) {
                continue;
            }
            let deriv = p.partial(&p.comps[s], i);
            for (slot, &c) in out.comps.iter_mut().zip(basis.coeffs()) {
                slot.add_scaled(&deriv, c);
            }
        }
    }
    Ok(out)
}

fn map_constant_linear(p: &PolynomialForm, f: impl Fn(&AlternatingForm) -> AlternatingForm, degree: usize) -> PolynomialForm {
    let dim = p.dim();
    let mut out = PolynomialForm::zero(p.geometry.clone(), degree);
    for (s, _) in increasing_sequences(dim, p.degree).iter().enumerate() {
        if p.comps[s].is_zero() {
            continue;
        }
        let mut unit = AlternatingForm::zero(dim, p.degree);
        unit.coeffs_mut()[s] = 1.0;
        let image = f(&unit);
        for (slot, &c) in out.comps.iter_mut().zip(image.coeffs()) {
            slot.add_scaled(&p.comps[s], c);
        }
    }
    out
}

/// Pointwise Hodge star.
pub fn hodge_star(p: &PolynomialForm) -> PolynomialForm {
    map_constant_linear(p, exterior::hodge_star, p.dim() - p.degree)
}

/// Pointwise inverse Hodge star.
pub fn hodge_star_inverse(p: &PolynomialForm) -> PolynomialForm {
    map_constant_linear(p, exterior::hodge_star_inverse, p.dim() - p.degree)
}

/// Codifferential `δω = (-1)^j ⋆^{-1} d ⋆ ω`.
pub fn codifferential(p: &PolynomialForm) -> Result<PolynomialForm> {
    let j = p.degree;
    if j == 0 {
        return Err(FeecError::InvalidDegree { op: "codifferential", degree: 0, dim: p.dim() });
    }
    let inner = exterior_derivative(&hodge_star(p))?;
    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
    Ok(hodge_star_inverse(&inner).scaled(sign))
}

/// Koszul operator: contraction with the field `x - origin`.
pub fn koszul(p: &PolynomialForm, origin: &[f64]) -> Result<PolynomialForm> {
    let dim = p.dim();
    let j = p.degree;
    if j == 0 {
        return Err(FeecError::InvalidDegree { op: "Koszul operator", degree: 0, dim });
    }
    if origin.len() != dim {
        return Err(FeecError::DimensionMismatch(origin.len(), dim));
    }
    let nv = dim + 1;
    // x_i - o_i = Σ_m λ_m (v_{m,i} - o_i)
    let position: Vec<BaryPoly> = (0..dim)
        .map(|i| {
            let mut q = BaryPoly::zero(nv);
            for (m, v) in p.geometry.vertices.iter().enumerate() {
                q.add_scaled(&BaryPoly::lambda(nv, m), v[i] - origin[i]);
            }
            q
        })
        .collect();
    let mut out = PolynomialForm::zero(p.geometry.clone(), j - 1);
    for (s, sigma) in increasing_sequences(dim, j).iter().enumerate() {
        if p.comps[s].is_zero() {
            continue;
        }
        for pos in 0..sigma.len() {
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            let rest: Vec<usize> = sigma.iter().enumerate().filter(|&(q, _)| q != pos).map(|(_, &x)| x).collect();
            let term = p.comps[s].mul(&position[sigma[pos]]);
            out.comps[sequence_rank(dim, &rest)].add_scaled(&term, sign);
        }
    }
    Ok(out)
}

/// Koszul operator based at the barycenter of the cell.
pub fn koszul_at_barycenter(p: &PolynomialForm) -> Result<PolynomialForm> {
    let origin = p.geometry.barycenter();
    koszul(p, &origin)
}

/// Pointwise wedge product of polynomial forms on the same cell.
pub fn wedge(a: &PolynomialForm, b: &PolynomialForm) -> Result<PolynomialForm> {
    let dim = a.dim();
    if dim != b.dim() {
        return Err(FeecError::DimensionMismatch(dim, b.dim()));
    }
    if a.degree + b.degree > dim {
        return Err(FeecError::DegreeOverflow { left: a.degree, right: b.degree, dim });
    }
    let mut out = PolynomialForm::zero(a.geometry.clone(), a.degree + b.degree);
    for (ia, sa) in increasing_sequences(dim, a.degree).iter().enumerate() {
        if a.comps[ia].is_zero() {
            continue;
        }
        for (ib, sb) in increasing_sequences(dim, b.degree).iter().enumerate() {
            if b.comps[ib].is_zero() {
                continue;
            }
            let mut axes = sa.clone();
            axes.extend_from_slice(sb);
            let basis = AlternatingForm::basis_wedge(dim, &axes);
            if basis.is_zero(0.0) {
                continue;
            }
            let prod = a.comps[ia].mul(&b.comps[ib]);
            for (slot, &c) in out.comps.iter_mut().zip(basis.coeffs()) {
                slot.add_scaled(&prod, c);
            }
        }
    }
    Ok(out)
}

/// `dλ_i` as a constant 1-form.
pub fn dlambda(geometry: &CellGeometry, i: usize) -> AlternatingForm {
    AlternatingForm::from_coeffs(geometry.dim, 1, geometry.grads[i].clone()).expect("gradient has d entries")
}

/// `dλ_{τ_1} ∧ … ∧ dλ_{τ_m}`.
pub fn dlambda_wedge(geometry: &CellGeometry, tau: &[usize]) -> AlternatingForm {
    let mut acc = AlternatingForm::scalar(geometry.dim, 1.0);
    for &t in tau {
        acc = exterior::wedge(&acc, &dlambda(geometry, t)).expect("degree within bounds");
    }
    acc
}

/// Whitney form `φ_σ = Σ_i (-1)^i λ_{σ_i} dλ_{σ∖σ_i}`.
pub fn whitney_form(geometry: &Arc<CellGeometry>, sigma: &[usize]) -> PolynomialForm {
    let nv = geometry.dim + 1;
    let mut out = PolynomialForm::zero(geometry.clone(), sigma.len() - 1);
    for i in 0..sigma.len() {
        let rest: Vec<usize> = sigma.iter().enumerate().filter(|&(q, _)| q != i).map(|(_, &x)| x).collect();
        let term = PolynomialForm::from_poly_times(geometry.clone(), &BaryPoly::lambda(nv, sigma[i]), &dlambda_wedge(geometry, &rest));
        out.add_scaled(&term, if i % 2 == 0 { 1.0 } else { -1.0 });
    }
    out
}

/// Homogeneous barycentric monomials of total degree `r` in the coordinates listed in `vars`.
fn monomials_on(nvars: usize, vars: &[usize], r: usize) -> Vec<BaryPoly> {
    multi_indices(vars.len(), r)
        .into_iter()
        .map(|alpha| {
            let mut e = vec![0u8; nvars];
            for (&v, &a) in vars.iter().zip(&alpha) {
                e[v] = a;
            }
            BaryPoly::monomial(nvars, &e, 1.0)
        })
        .collect()
}

/// Basis of `P_r Λ^j(T)`: homogeneous degree-`r` monomials times `dx_σ`.
pub fn full_monomial_basis(geometry: &Arc<CellGeometry>, r: usize, j: usize) -> Vec<PolynomialForm> {
    let dim = geometry.dim;
    let vars: Vec<usize> = (0..=dim).collect();
    let mut out = Vec::new();
    for m in monomials_on(dim + 1, &vars, r) {
        for sigma in increasing_sequences(dim, j) {
            out.push(PolynomialForm::from_poly_times(geometry.clone(), &m, &AlternatingForm::basis_wedge(dim, &sigma)));
        }
    }
    out
}

/// Principal lattice of order `r` in barycentric coordinates (the barycenter for `r = 0`).
pub fn lattice_points(dim: usize, r: usize) -> Vec<Vec<f64>> {
    if r == 0 {
        return vec![vec![1.0 / (dim + 1) as f64; dim + 1]];
    }
    multi_indices(dim + 1, r)
        .into_iter()
        .map(|a| a.iter().map(|&x| x as f64 / r as f64).collect())
        .collect()
}

/// Values of each form at the principal lattice matching the largest polynomial degree;
/// injective on the spanned polynomial space.
fn sample_matrix(forms: &[PolynomialForm]) -> DMatrix<f64> {
    let Some(first) = forms.first() else {
        return DMatrix::zeros(0, 0);
    };
    let dim = first.dim();
    let r = forms.iter().map(PolynomialForm::poly_degree).max().unwrap_or(0);
    let pts = lattice_points(dim, r);
    let ncomp = binomial(dim, first.degree);
    let mut mat = DMatrix::zeros(pts.len() * ncomp, forms.len());
    for (c, f) in forms.iter().enumerate() {
        for (pi, p) in pts.iter().enumerate() {
            let v = f.eval(p);
            for (k, &x) in v.coeffs().iter().enumerate() {
                mat[(pi * ncomp + k, c)] = x;
            }
        }
    }
    mat
}

/// Numerical rank of a spanning set of forms.
pub fn span_rank(forms: &[PolynomialForm]) -> usize {
    if forms.is_empty() {
        return 0;
    }
    let m = sample_matrix(forms);
    let sv = m.singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * top.max(1e-300)).count()
}

/// Greedy extraction of a linearly independent subset by modified Gram–Schmidt on samples.
pub fn independent_subset(forms: Vec<PolynomialForm>) -> Vec<PolynomialForm> {
    if forms.is_empty() {
        return forms;
    }
    let mat = sample_matrix(&forms);
    let scale = (0..mat.ncols()).map(|c| mat.column(c).norm()).fold(0.0, f64::max);
    let mut kept: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for (c, f) in forms.into_iter().enumerate() {
        let mut v = mat.column(c).into_owned();
        for _ in 0..2 {
            for q in &kept {
                let proj = q.dot(&v);
                v -= q * proj;
            }
        }
        let n = v.norm();
        if n > 1e-9 * scale {
            kept.push(v / n);
            out.push(f);
        }
    }
    out
}

/// Spanning set of `P^-_r Λ^j`: `P_{r-1}Λ^j + κ P_{r-1}Λ^{j+1}`.
fn trimmed_spanning_set(geometry: &Arc<CellGeometry>, r: usize, j: usize) -> Vec<PolynomialForm> {
    let dim = geometry.dim;
    let mut out = full_monomial_basis(geometry, r - 1, j);
    if j < dim {
        for f in full_monomial_basis(geometry, r - 1, j + 1) {
            out.push(koszul_at_barycenter(&f).expect("degree at least one"));
        }
    }
    out
}

/// `dim P_r Λ^j` on a `d`-simplex.
pub fn dim_full(d: usize, r: usize, j: usize) -> usize {
    binomial(d + r, d) * binomial(d, j)
}

/// `dim P^-_r Λ^j` on a `d`-simplex (`r ≥ 1`).
pub fn dim_trimmed(d: usize, r: usize, j: usize) -> usize {
    if j == 0 {
        return binomial(d + r, d);
    }
    binomial(r + j - 1, j) * binomial(d + r, d - j)
}

/// Which weight a degree of freedom integrates against.
#[derive(Clone, Debug)]
pub enum DofWeight {
    /// `∫_f tr ω ∧ η`; point evaluation times `η` on vertices.
    TraceWedge(PolynomialForm),
    /// `∫_f ω_σ q` with the true measure of `f`; point evaluation on vertices.
    Component { sigma: usize, q: BaryPoly },
    /// `∫_T ⟨ω, q⟩`.
    Inner(PolynomialForm),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofKind {
    Vertex,
    Face,
    Interior,
}

/// A linear functional on polynomial forms attached to a sub-simplex of the cell.
#[derive(Clone, Debug)]
pub struct DofFunctional {
    pub kind: DofKind,
    /// Local vertex indices of the supporting sub-simplex, ascending.
    pub face: Vec<usize>,
    pub weight: DofWeight,
    /// Apply `⋆^{-1}` to the argument first.
    pub star: bool,
}

impl DofFunctional {
    pub fn face_dim(&self) -> usize {
        self.face.len() - 1
    }

    pub fn apply(&self, p: &PolynomialForm) -> f64 {
        let owned;
        let arg = if self.star {
            owned = hodge_star_inverse(p);
            &owned
        } else {
            p
        };
        let geom = arg.geometry.clone();
        let dim = geom.dim;
        let m = self.face_dim();
        let weight_degree = match &self.weight {
            DofWeight::TraceWedge(eta) | DofWeight::Inner(eta) => eta.poly_degree(),
            DofWeight::Component { q, .. } => q.degree(),
        };
        let rule = simplex_rule(m, arg.poly_degree() + weight_degree);
        let to_cell = |fb: &[f64]| {
            let mut b = vec![0.0; dim + 1];
            for (&v, &x) in self.face.iter().zip(fb) {
                b[v] = x;
            }
            b
        };
        match &self.weight {
            DofWeight::TraceWedge(eta) => {
                let tangents: Vec<Vec<f64>> = self.face[1..]
                    .iter()
                    .map(|&v| geom.vertices[v].iter().zip(&geom.vertices[self.face[0]]).map(|(a, b)| a - b).collect())
                    .collect();
                let factorial: f64 = (1..=m).map(|x| x as f64).product();
                let mut acc = 0.0;
                for (fb, w) in rule.points.iter().zip(&rule.weights) {
                    let b = to_cell(fb);
                    let prod = exterior::wedge(&arg.eval(&b), &eta.eval(&b)).expect("degrees sum to face dimension");
                    acc += w * exterior::evaluate_on(&prod, &tangents).expect("matching degree");
                }
                acc / factorial
            }
            DofWeight::Component { sigma, q } => {
                let measure = if m == 0 { 1.0 } else { geom.face_measure(&self.face) };
                let mut acc = 0.0;
                for (fb, w) in rule.points.iter().zip(&rule.weights) {
                    let b = to_cell(fb);
                    acc += w * arg.comps[*sigma].eval(&b) * q.eval(&b);
                }
                measure * acc
            }
            DofWeight::Inner(q) => {
                let mut acc = 0.0;
                for (b, w) in rule.points.iter().zip(&rule.weights) {
                    let x = arg.eval(b);
                    let y = q.eval(b);
                    acc += w * exterior::alt_inner(&x, &y).expect("matching degree");
                }
                geom.measure * acc
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Full,
    Trimmed,
    StarTrimmed,
    Phi,
}

/// Result of a unisolvence check.
#[derive(Clone, Debug)]
pub struct UnisolvenceReport {
    pub ok: bool,
    pub num_dofs: usize,
    pub dim: usize,
    /// 2-norm condition number of the generalized Vandermonde matrix (infinite if singular).
    pub condition: f64,
    pub message: String,
}

/// A local finite element: shape space, degrees of freedom and the dual basis.
#[derive(Clone, Debug)]
pub struct ShapeBasis {
    pub kind: ShapeKind,
    /// Polynomial degree parameter of the family.
    pub k: usize,
    /// Form degree of the members.
    pub form_degree: usize,
    pub geometry: Arc<CellGeometry>,
    /// Linearly independent spanning functions of the shape space.
    pub raw: Vec<PolynomialForm>,
    /// Dual basis: `dofs[i].apply(&functions[j]) = δ_ij`.
    pub functions: Vec<PolynomialForm>,
    pub dofs: Vec<DofFunctional>,
    pub condition: f64,
}

impl ShapeBasis {
    fn dualize(kind: ShapeKind, k: usize, form_degree: usize, geometry: Arc<CellGeometry>, raw: Vec<PolynomialForm>, dofs: Vec<DofFunctional>) -> Result<Self> {
        let mut basis = Self { kind, k, form_degree, geometry, raw, functions: Vec::new(), dofs, condition: f64::INFINITY };
        let report = check_unisolvence(&basis);
        if !report.ok {
            return Err(FeecError::NotUnisolvent(report.message));
        }
        let n = basis.dofs.len();
        let v = vandermonde(&basis.dofs, &basis.raw);
        let inv = v.try_inverse().ok_or_else(|| FeecError::NotUnisolvent("singular Vandermonde".into()))?;
        let mut functions = Vec::with_capacity(n);
        for j in 0..n {
            let mut f = PolynomialForm::zero(basis.geometry.clone(), form_degree);
            for i in 0..n {
                f.add_scaled(&basis.raw[i], inv[(i, j)]);
            }
            functions.push(f);
        }
        basis.functions = functions;
        basis.condition = report.condition;
        Ok(basis)
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Largest deviation of `DoF_i(φ_j)` from `δ_ij`.
    pub fn duality_defect(&self) -> f64 {
        let v = vandermonde(&self.dofs, &self.functions);
        let mut worst: f64 = 0.0;
        for i in 0..v.nrows() {
            for j in 0..v.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// `V[i][j] = dofs[i](forms[j])`.
pub fn vandermonde(dofs: &[DofFunctional], forms: &[PolynomialForm]) -> DMatrix<f64> {
    DMatrix::from_fn(dofs.len(), forms.len(), |i, j| dofs[i].apply(&forms[j]))
}

/// Checks that the degrees of freedom determine members of the shape space uniquely.
pub fn check_unisolvence(basis: &ShapeBasis) -> UnisolvenceReport {
    let n = basis.dofs.len();
    let dim = basis.raw.len();
    if n != dim {
        return UnisolvenceReport {
            ok: false,
            num_dofs: n,
            dim,
            condition: f64::INFINITY,
            message: format!("{n} degrees of freedom for a {dim}-dimensional shape space"),
        };
    }
    if n == 0 {
        return UnisolvenceReport { ok: true, num_dofs: 0, dim: 0, condition: 1.0, message: "empty space".into() };
    }
    let v = vandermonde(&basis.dofs, &basis.raw);
    let sv = v.singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    let ok = smin > 1e-11 * smax;
    UnisolvenceReport {
        ok,
        num_dofs: n,
        dim,
        condition,
        message: if ok { "unisolvent".into() } else { format!("singular Vandermonde (condition {condition:.3e})") },
    }
}

/// All increasing subsets of the cell vertices of size `l + 1`, lexicographic.
pub fn local_faces(dim: usize, l: usize) -> Vec<Vec<usize>> {
    increasing_sequences(dim + 1, l + 1)
}

/// Test forms `η ∈ P^-_s Λ^q(f)` on the face `f`: `λ^α φ_σ` with `σ ⊂ f`, `|σ| = q + 1`,
/// `|α| = s - 1`, `α` vanishing below `min σ`.
fn face_trimmed_tests(geometry: &Arc<CellGeometry>, face: &[usize], s: usize, q: usize) -> Vec<PolynomialForm> {
    let nv = geometry.dim + 1;
    let mut out = Vec::new();
    for sigma_pos in increasing_sequences(face.len(), q + 1) {
        let sigma: Vec<usize> = sigma_pos.iter().map(|&i| face[i]).collect();
        let whitney = whitney_form(geometry, &sigma);
        let vars: Vec<usize> = face[sigma_pos[0]..].to_vec();
        for m in monomials_on(nv, &vars, s - 1) {
            out.push(whitney.mul_poly(&m));
        }
    }
    out
}

/// Test forms `η ∈ P_s Λ^q(f)`: `λ^β dλ_τ`, `|β| = s` over the face vertices, `τ ⊂ f ∖ {f_0}`.
fn face_full_tests(geometry: &Arc<CellGeometry>, face: &[usize], s: usize, q: usize) -> Vec<PolynomialForm> {
    let nv = geometry.dim + 1;
    let mut out = Vec::new();
    for m in monomials_on(nv, face, s) {
        for tau_pos in increasing_sequences(face.len() - 1, q) {
            let tau: Vec<usize> = tau_pos.iter().map(|&i| face[i + 1]).collect();
            out.push(PolynomialForm::from_poly_times(geometry.clone(), &m, &dlambda_wedge(geometry, &tau)));
        }
    }
    out
}

fn kind_for(m: usize, dim: usize) -> DofKind {
    if m == 0 {
        DofKind::Vertex
    } else if m == dim {
        DofKind::Interior
    } else {
        DofKind::Face
    }
}

/// Moment functionals `∫_f tr ω ∧ η` for the full (`trimmed = false`) or trimmed family.
fn trace_dofs(geometry: &Arc<CellGeometry>, r: usize, j: usize, trimmed: bool) -> Vec<DofFunctional> {
    let dim = geometry.dim;
    let mut out = Vec::new();
    for m in j..=dim {
        let q = m - j;
        let s = if trimmed { r as isize + j as isize - m as isize - 1 } else { r as isize + j as isize - m as isize };
        let need = if trimmed { 0 } else { 1 };
        if s < need {
            continue;
        }
        for face in local_faces(dim, m) {
            let tests = if trimmed {
                face_full_tests(geometry, &face, s as usize, q)
            } else {
                face_trimmed_tests(geometry, &face, s as usize, q)
            };
            for eta in tests {
                out.push(DofFunctional { kind: kind_for(m, dim), face: face.clone(), weight: DofWeight::TraceWedge(eta), star: false });
            }
        }
    }
    out
}

/// The full polynomial element `P_r Λ^j(T)`.
pub fn space_p(r: usize, j: usize, geometry: Arc<CellGeometry>) -> Result<ShapeBasis> {
    let dim = geometry.dim;
    if j > dim {
        return Err(FeecError::InvalidDegree { op: "P_r space", degree: j, dim });
    }
    let raw = full_monomial_basis(&geometry, r, j);
    let dofs = trace_dofs(&geometry, r, j, false);
    ShapeBasis::dualize(ShapeKind::Full, r, j, geometry, raw, dofs)
}

/// The trimmed element `P^-_r Λ^j(T)`.
pub fn space_pminus(r: usize, j: usize, geometry: Arc<CellGeometry>) -> Result<ShapeBasis> {
    let dim = geometry.dim;
    if j > dim {
        return Err(FeecError::InvalidDegree { op: "trimmed space", degree: j, dim });
    }
    if r == 0 {
        return Err(FeecError::Unsupported("trimmed spaces need r ≥ 1".into()));
    }
    let raw = independent_subset(trimmed_spanning_set(&geometry, r, j));
    let expected = dim_trimmed(dim, r, j);
    if raw.len() != expected {
        return Err(FeecError::RankDeficient { what: format!("P^-_{r}Λ^{j}"), expected, found: raw.len() });
    }
    let dofs = trace_dofs(&geometry, r, j, true);
    ShapeBasis::dualize(ShapeKind::Trimmed, r, j, geometry, raw, dofs)
}

/// `⋆ P^-_r Λ^{d-j}(T)`, a space of `j`-forms, with degrees of freedom pulled back by `⋆^{-1}`.
pub fn space_star_trimmed(r: usize, j: usize, geometry: Arc<CellGeometry>) -> Result<ShapeBasis> {
    let dim = geometry.dim;
    if j > dim {
        return Err(FeecError::InvalidDegree { op: "star-trimmed space", degree: j, dim });
    }
    let base = space_pminus(r, dim - j, geometry)?;
    Ok(ShapeBasis {
        kind: ShapeKind::StarTrimmed,
        k: r,
        form_degree: j,
        geometry: base.geometry.clone(),
        raw: base.raw.iter().map(hodge_star).collect(),
        functions: base.functions.iter().map(hodge_star).collect(),
        dofs: base.dofs.into_iter().map(|d| DofFunctional { star: true, ..d }).collect(),
        condition: base.condition,
    })
}

/// Interior test space `P_{k-d-1}Λ^{j+1} + δ P_k Λ^{j+2}` (for `j = d-1` the second part is
/// replaced by the constants `P_0Λ^d` whenever the bubble is not already in `P_kΛ^d`).
pub fn phi_interior_tests(k: usize, j: usize, geometry: &Arc<CellGeometry>) -> Vec<PolynomialForm> {
    let dim = geometry.dim;
    let mut span = Vec::new();
    if k >= dim + 1 {
        span.extend(full_monomial_basis(geometry, k - dim - 1, j + 1));
    }
    if j + 2 <= dim {
        for f in full_monomial_basis(geometry, k, j + 2) {
            let g = codifferential(&f).expect("degree at least one");
            if !g.is_zero() {
                span.push(g);
            }
        }
    } else if k <= dim {
        span.extend(full_monomial_basis(geometry, 0, dim));
    }
    independent_subset(span)
}

/// Bubble-enriched space `Φ_k(T) = P_kΛ^{j+1} + b_T δP_kΛ^{j+2}` of `(j+1)`-forms with vertex,
/// face-moment and interior-moment degrees of freedom.
pub fn space_phi(k: usize, j: usize, geometry: Arc<CellGeometry>) -> Result<ShapeBasis> {
    let dim = geometry.dim;
    if k == 0 || j >= dim {
        return Err(FeecError::Unsupported(format!("Φ_k needs k ≥ 1 and j ≤ d-1 (k={k}, j={j}, d={dim})")));
    }
    let nv = dim + 1;
    let bubble = BaryPoly::bubble(nv);
    let ncomp = binomial(dim, j + 1);

    let mut span = full_monomial_basis(&geometry, k, j + 1);
    let enrich: Vec<PolynomialForm> = if j + 2 <= dim {
        full_monomial_basis(&geometry, k, j + 2)
            .iter()
            .map(|f| codifferential(f).expect("degree at least one"))
            .filter(|g| !g.is_zero())
            .collect()
    } else {
        full_monomial_basis(&geometry, 0, dim)
    };
    span.extend(enrich.iter().map(|g| g.mul_poly(&bubble)));
    let raw = independent_subset(span);

    let mut dofs = Vec::new();
    for v in 0..nv {
        for sigma in 0..ncomp {
            dofs.push(DofFunctional { kind: DofKind::Vertex, face: vec![v], weight: DofWeight::Component { sigma, q: BaryPoly::constant(nv, 1.0) }, star: false });
        }
    }
    for l in 1..dim {
        if k < l + 1 {
            continue;
        }
        for face in local_faces(dim, l) {
            for q in monomials_on(nv, &face, k - l - 1) {
                for sigma in 0..ncomp {
                    dofs.push(DofFunctional { kind: DofKind::Face, face: face.clone(), weight: DofWeight::Component { sigma, q: q.clone() }, star: false });
                }
            }
        }
    }
    let all: Vec<usize> = (0..nv).collect();
    for q in phi_interior_tests(k, j, &geometry) {
        dofs.push(DofFunctional { kind: DofKind::Interior, face: all.clone(), weight: DofWeight::Inner(q), star: false });
    }
    ShapeBasis::dualize(ShapeKind::Phi, k, j + 1, geometry, raw, dofs)
}

/// Builds the element of the requested kind. For `Phi`, `j` is the index of the problem so that
/// members are `(j+1)`-forms; otherwise members are `j`-forms.
pub fn build_element(kind: ShapeKind, k: usize, j: usize, geometry: Arc<CellGeometry>) -> Result<ShapeBasis> {
    match kind {
        ShapeKind::Full => space_p(k, j, geometry),
        ShapeKind::Trimmed => space_pminus(k, j, geometry),
        ShapeKind::StarTrimmed => space_star_trimmed(k, j, geometry),
        ShapeKind::Phi => space_phi(k, j, geometry),
    }
}

/// Ranks in the splitting `P_kΛ^j = ⋆κP_{k-1}Λ^{d-j+1} ⊕ δP_{k+1}Λ^{j+1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KoszulRanks {
    pub koszul: usize,
    pub codifferential: usize,
    /// Rank of the two families together.
    pub combined: usize,
    pub full: usize,
}

impl KoszulRanks {
    /// The summands fill `P_kΛ^j` and intersect trivially.
    pub fn holds(&self) -> bool {
        self.koszul + self.codifferential == self.full && self.combined == self.full
    }
}

/// Computes [`KoszulRanks`] on the reference simplex for `1 ≤ j ≤ d - 1`.
pub fn koszul_decomposition_ranks(d: usize, k: usize, j: usize) -> KoszulRanks {
    let g = Arc::new(CellGeometry::reference(d));
    let kappa: Vec<PolynomialForm> = if k >= 1 {
        full_monomial_basis(&g, k - 1, d - j + 1)
            .iter()
            .map(|f| hodge_star(&koszul_at_barycenter(f).expect("positive degree")))
            .collect()
    } else {
        Vec::new()
    };
    let delta: Vec<PolynomialForm> = if j < d {
        full_monomial_basis(&g, k + 1, j + 1).iter().map(|f| codifferential(f).expect("positive degree")).collect()
    } else {
        Vec::new()
    };
    let koszul = span_rank(&kappa);
    let codifferential = span_rank(&delta);
    let mut both = kappa;
    both.extend(delta);
    KoszulRanks { koszul, codifferential, combined: span_rank(&both), full: dim_full(d, k, j) }
}
