//! Exterior algebra over `R^d` with the standard orthonormal basis and orientation.
//!
//! A `j`-form is stored by its coefficients on `dx_σ = dx_{σ_1} ∧ … ∧ dx_{σ_j}` for strictly
//! increasing `σ`, enumerated lexicographically. Every sign in this module comes from
//! [`permutation_sign`].

use crate::combinatorics::{binomial, increasing_sequences, permutation_sign, sequence_rank};
use crate::error::{FeecError, Result};

/// A strictly increasing index sequence labelling a basis form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IncreasingIndex {
    entries: Vec<usize>,
}

impl IncreasingIndex {
    /// Sorts `seq`, returning the canonical index and the parity of the sorting permutation.
    /// Returns `None` when `seq` has a repeated entry (the wedge vanishes).
    pub fn from_unsorted(seq: &[usize]) -> Option<(Self, i32)> {
        let sign = permutation_sign(seq);
        if sign == 0 {
            return None;
        }
        let mut entries = seq.to_vec();
        entries.sort_unstable();
        Some((Self { entries }, sign))
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Position of this index among the increasing sequences of its length in `0..dim`.
    pub fn rank(&self, dim: usize) -> usize {
        sequence_rank(dim, &self.entries)
    }

    /// Indices of `0..dim` not present, in increasing order.
    pub fn complement(&self, dim: usize) -> Self {
        Self {
            entries: (0..dim).filter(|i| !self.entries.contains(i)).collect(),
        }
    }
}

/// An element of `Alt^j R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingForm {
    dim: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl AlternatingForm {
    pub fn zero(dim: usize, degree: usize) -> Self {
        Self {
            dim,
            degree,
            coeffs: vec![0.0; binomial(dim, degree)],
        }
    }

    /// Builds a form from coefficients in lexicographic basis order.
    pub fn from_coeffs(dim: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if degree > dim {
            return Err(FeecError::InvalidDegree { op: "alternating form", degree, dim });
        }
        if coeffs.len() != binomial(dim, degree) {
            return Err(FeecError::OutOfRange { index: coeffs.len(), limit: binomial(dim, degree) });
        }
        Ok(Self { dim, degree, coeffs })
    }

    /// `dx_{i_1} ∧ … ∧ dx_{i_j}` for an arbitrary (not necessarily sorted) list of axes.
    pub fn basis_wedge(dim: usize, axes: &[usize]) -> Self {
        let mut out = Self::zero(dim, axes.len());
        if let Some((idx, sign)) = IncreasingIndex::from_unsorted(axes) {
            out.coeffs[idx.rank(dim)] = sign as f64;
        }
        out
    }

    /// The constant 0-form `c`.
    pub fn scalar(dim: usize, c: f64) -> Self {
        Self { dim, degree: 0, coeffs: vec![c] }
    }

    /// The volume form `dx_1 ∧ … ∧ dx_d`.
    pub fn volume(dim: usize) -> Self {
        Self { dim, degree: dim, coeffs: vec![1.0] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn is_zero(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|c| c.abs() <= tol)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            dim: self.dim,
            degree: self.degree,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(FeecError::DimensionMismatch(self.dim, other.dim));
        }
        if self.degree != other.degree {
            return Err(FeecError::DegreeMismatch(self.degree, other.degree));
        }
        Ok(())
    }
}

/// Exterior product. Rejects `a.degree + b.degree > d` rather than returning a trivial form.
pub fn wedge(a: &AlternatingForm, b: &AlternatingForm) -> Result<AlternatingForm> {
    if a.dim != b.dim {
        return Err(FeecError::DimensionMismatch(a.dim, b.dim));
    }
    let dim = a.dim;
    if a.degree + b.degree > dim {
        return Err(FeecError::DegreeOverflow { left: a.degree, right: b.degree, dim });
    }
    let mut out = AlternatingForm::zero(dim, a.degree + b.degree);
    let left = increasing_sequences(dim, a.degree);
    let right = increasing_sequences(dim, b.degree);
    let mut joined = Vec::with_capacity(a.degree + b.degree);
    for (ia, sa) in left.iter().enumerate() {
        let ca = a.coeffs[ia];
        if ca == 0.0 {
            continue;
        }
        for (ib, sb) in right.iter().enumerate() {
            let cb = b.coeffs[ib];
            if cb == 0.0 {
                continue;
            }
            joined.clear();
            joined.extend_from_slice(sa);
            joined.extend_from_slice(sb);
            if let Some((idx, sign)) = IncreasingIndex::from_unsorted(&joined) {
                out.coeffs[idx.rank(dim)] += sign as f64 * ca * cb;
            }
        }
    }
    Ok(out)
}

/// Sign `s` with `dx_σ ∧ dx_{σ^c} = s · vol`.
fn complement_sign(dim: usize, seq: &[usize]) -> (Vec<usize>, i32) {
    let comp: Vec<usize> = (0..dim).filter(|i| !seq.contains(i)).collect();
    let mut joined = seq.to_vec();
    joined.extend_from_slice(&comp);
    (comp, permutation_sign(&joined))
}

/// Hodge star `Alt^j → Alt^{d-j}`, characterised by `ω ∧ η = ⟨⋆ω, η⟩ vol`.
pub fn hodge_star(a: &AlternatingForm) -> AlternatingForm {
    let dim = a.dim;
    let mut out = AlternatingForm::zero(dim, dim - a.degree);
    for (i, seq) in increasing_sequences(dim, a.degree).iter().enumerate() {
        let (comp, sign) = complement_sign(dim, seq);
        out.coeffs[sequence_rank(dim, &comp)] += sign as f64 * a.coeffs[i];
    }
    out
}

/// Inverse of the Hodge star, `⋆^{-1} = (-1)^{j(d-j)} ⋆` on `j`-forms.
pub fn hodge_star_inverse(a: &AlternatingForm) -> AlternatingForm {
    let j = a.degree;
    let s = double_star_sign(a.dim, j);
    hodge_star(a).scaled(s)
}

/// `(-1)^{j(d-j)}`, the sign of `⋆⋆` on `j`-forms.
pub fn double_star_sign(dim: usize, degree: usize) -> f64 {
    if (degree * (dim - degree)) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Inner product induced by the Euclidean inner product of `R^d`.
pub fn alt_inner(a: &AlternatingForm, b: &AlternatingForm) -> Result<f64> {
    a.check_same(b)?;
    Ok(a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x * y).sum())
}

/// Contraction `v ⌟ ω`, i.e. `(v ⌟ ω)(w_2, …) = ω(v, w_2, …)`.
pub fn interior_product(v: &[f64], a: &AlternatingForm) -> Result<AlternatingForm> {
    if v.len() != a.dim {
        return Err(FeecError::DimensionMismatch(v.len(), a.dim));
    }
    if a.degree == 0 {
        return Err(FeecError::InvalidDegree { op: "interior product", degree: 0, dim: a.dim });
    }
    let dim = a.dim;
    let mut out = AlternatingForm::zero(dim, a.degree - 1);
    for (i, seq) in increasing_sequences(dim, a.degree).iter().enumerate() {
        let c = a.coeffs[i];
        if c == 0.0 {
            continue;
        }
        for pos in 0..seq.len() {
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            let rest: Vec<usize> = seq.iter().enumerate().filter(|&(p, _)| p != pos).map(|(_, &s)| s).collect();
            out.coeffs[sequence_rank(dim, &rest)] += sign * c * v[seq[pos]];
        }
    }
    Ok(out)
}

/// Evaluates the form on `j` vectors: `Σ_σ c_σ det[v_b(σ_a)]`.
pub fn evaluate_on(a: &AlternatingForm, vectors: &[Vec<f64>]) -> Result<f64> {
    if vectors.len() != a.degree {
        return Err(FeecError::DegreeMismatch(vectors.len(), a.degree));
    }
    let mut total = 0.0;
    for (i, seq) in increasing_sequences(a.dim, a.degree).iter().enumerate() {
        if a.coeffs[i] == 0.0 {
            continue;
        }
        let m = nalgebra::DMatrix::from_fn(seq.len(), seq.len(), |r, c| vectors[c][seq[r]]);
        total += a.coeffs[i] * if seq.is_empty() { 1.0 } else { m.determinant() };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dx(dim: usize, i: usize) -> AlternatingForm {
        AlternatingForm::basis_wedge(dim, &[i])
    }

    /// Full antisymmetric tensor of a form: value on every tuple of basis vectors.
    fn as_tensor(a: &AlternatingForm) -> Vec<f64> {
        let d = a.dim();
        let j = a.degree();
        let mut out = vec![0.0; d.pow(j as u32)];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut tuple = vec![0; j];
            let mut rem = flat;
            for t in tuple.iter_mut().rev() {
                *t = rem % d;
                rem /= d;
            }
            let vecs: Vec<Vec<f64>> = tuple
                .iter()
                .map(|&k| (0..d).map(|r| if r == k { 1.0 } else { 0.0 }).collect())
                .collect();
            *slot = evaluate_on(a, &vecs).unwrap();
        }
        out
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// `binom(i+j, j) skw(ω ⊗ η)` evaluated on every basis tuple.
    fn wedge_oracle(a: &AlternatingForm, b: &AlternatingForm) -> Vec<f64> {
        let d = a.dim();
        let (i, j) = (a.degree(), b.degree());
        let ta = as_tensor(a);
        let tb = as_tensor(b);
        let n = i + j;
        let perms = permutations(n);
        let fact: f64 = (1..=n).map(|x| x as f64).product();
        let scale = binomial(n, j) as f64 / fact;
        let mut out = vec![0.0; d.pow(n as u32)];
        for (flat, slot) in out.iter_mut().enumerate() {
            let mut tuple = vec![0; n];
            let mut rem = flat;
            for t in tuple.iter_mut().rev() {
                *t = rem % d;
                rem /= d;
            }
            let mut acc = 0.0;
            for p in &perms {
                let permuted: Vec<usize> = p.iter().map(|&k| tuple[k]).collect();
                let ia = permuted[..i].iter().fold(0, |acc, &x| acc * d + x);
                let ib = permuted[i..].iter().fold(0, |acc, &x| acc * d + x);
                acc += permutation_sign(p) as f64 * ta[ia] * tb[ib];
            }
            *slot = scale * acc;
        }
        out
    }

    #[test]
    fn basis_wedges() {
        let w = wedge(&dx(3, 0), &dx(3, 1)).unwrap();
        assert_eq!(w, AlternatingForm::basis_wedge(3, &[0, 1]));
        assert_eq!(w.coeffs()[0], 1.0);
        let w2 = wedge(&dx(3, 1), &dx(3, 0)).unwrap();
        assert_eq!(w2.coeffs()[0], -1.0);
    }

    #[test]
    fn wedge_matches_skew_tensor_oracle() {
        // (2dx1 + dx3) ∧ (dx1 ∧ dx2) in R^3
        let a = dx(3, 0).scaled(2.0).add(&dx(3, 2)).unwrap();
        let b = AlternatingForm::basis_wedge(3, &[0, 1]);
        let w = wedge(&a, &b).unwrap();
        let oracle = wedge_oracle(&a, &b);
        assert_eq!(as_tensor(&w), oracle);
        // the oracle value on (e1, e2, e3) is +1
        assert_eq!(oracle[0 * 9 + 1 * 3 + 2], 1.0);
        assert_eq!(w, AlternatingForm::volume(3));
    }

    #[test]
    fn wedge_errors() {
        let a = AlternatingForm::basis_wedge(3, &[0, 1]);
        assert!(matches!(wedge(&a, &a), Err(FeecError::DegreeOverflow { .. })));
        assert!(matches!(wedge(&dx(2, 0), &dx(3, 0)), Err(FeecError::DimensionMismatch(2, 3))));
    }

    #[test]
    fn hodge_examples() {
        let vol = hodge_star(&AlternatingForm::scalar(3, 1.0));
        assert_eq!(vol, AlternatingForm::volume(3));
        // ⋆dx2 = -dx1∧dx3; oracle: solve ⟨⋆dx2, η⟩vol = dx2 ∧ η over the Alt^2 basis
        let star = hodge_star(&dx(3, 1));
        for (k, seq) in increasing_sequences(3, 2).iter().enumerate() {
            let eta = AlternatingForm::basis_wedge(3, seq);
            let lhs = wedge(&dx(3, 1), &eta).unwrap().coeffs()[0];
            assert_eq!(star.coeffs()[k], lhs);
        }
        assert_eq!(star, AlternatingForm::basis_wedge(3, &[0, 2]).scaled(-1.0));
    }

    #[test]
    fn inner_products() {
        let a = AlternatingForm::basis_wedge(3, &[0, 1]);
        let b = AlternatingForm::basis_wedge(3, &[0, 2]);
        assert_eq!(alt_inner(&a, &a).unwrap(), 1.0);
        assert_eq!(alt_inner(&a, &b).unwrap(), 0.0);
        let u = dx(3, 0).scaled(2.0).add(&dx(3, 1)).unwrap();
        let v = dx(3, 0).add(&dx(3, 1).scaled(-1.0)).unwrap();
        assert_eq!(alt_inner(&u, &v).unwrap(), 1.0);
        assert!(alt_inner(&a, &u).is_err());
    }

    #[test]
    fn double_star_sweep() {
        for d in 2..=4 {
            for j in 0..=d {
                for seq in increasing_sequences(d, j) {
                    let w = AlternatingForm::basis_wedge(d, &seq);
                    let back = hodge_star(&hodge_star(&w));
                    assert_eq!(back, w.scaled(double_star_sign(d, j)), "d={d} j={j}");
                    assert_eq!(hodge_star_inverse(&hodge_star(&w)), w);
                }
            }
        }
    }

    #[test]
    fn interior_product_contracts_first_slot() {
        let w = AlternatingForm::basis_wedge(3, &[0, 1]);
        let v = [0.5, 2.0, -1.0];
        let c = interior_product(&v, &w).unwrap();
        // (v ⌟ dx1∧dx2) = v1 dx2 - v2 dx1
        assert_eq!(c.coeffs(), &[-2.0, 0.5, 0.0]);
        assert!(interior_product(&v, &AlternatingForm::scalar(3, 1.0)).is_err());
    }

    fn arb_form(dim: usize, degree: usize) -> impl Strategy<Value = AlternatingForm> {
        prop::collection::vec(-2.0f64..2.0, binomial(dim, degree))
            .prop_map(move |c| AlternatingForm::from_coeffs(dim, degree, c).unwrap())
    }

    fn arb_pair() -> impl Strategy<Value = (AlternatingForm, AlternatingForm)> {
        (2usize..=4)
            .prop_flat_map(|d| (Just(d), 0..=d))
            .prop_flat_map(|(d, i)| (Just(d), Just(i), 0..=(d - i)))
            .prop_flat_map(|(d, i, j)| (arb_form(d, i), arb_form(d, j)))
    }

    proptest! {
        #[test]
        fn anticommutativity((a, b) in arb_pair()) {
            let ab = wedge(&a, &b).unwrap();
            let ba = wedge(&b, &a).unwrap();
            let s = if (a.degree() * b.degree()) % 2 == 0 { 1.0 } else { -1.0 };
            prop_assert!(ab.max_abs_diff(&ba.scaled(s)) <= 1e-14);
        }

        #[test]
        fn associativity(d in 3usize..=4, seed in prop::collection::vec(-2.0f64..2.0, 3 * 6)) {
            let a = AlternatingForm::from_coeffs(d, 1, seed[..d].to_vec()).unwrap();
            let b = AlternatingForm::from_coeffs(d, 1, seed[6..6 + d].to_vec()).unwrap();
            let c = AlternatingForm::from_coeffs(d, 1, seed[12..12 + d].to_vec()).unwrap();
            let left = wedge(&wedge(&a, &b).unwrap(), &c).unwrap();
            let right = wedge(&a, &wedge(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) <= 1e-13);
        }

        #[test]
        fn hodge_is_isometry((a, b) in (2usize..=4).prop_flat_map(|d| (Just(d), 0..=d)).prop_flat_map(|(d, j)| (arb_form(d, j), arb_form(d, j)))) {
            let lhs = alt_inner(&hodge_star(&a), &hodge_star(&b)).unwrap();
            let rhs = alt_inner(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-14);
        }

        #[test]
        fn hodge_characterisation((a, eta) in (2usize..=4).prop_flat_map(|d| (Just(d), 0..=d)).prop_flat_map(|(d, j)| (arb_form(d, j), arb_form(d, d - j)))) {
            let lhs = wedge(&a, &eta).unwrap().coeffs()[0];
            let rhs = alt_inner(&hodge_star(&a), &eta).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-13);
        }

        #[test]
        fn double_star_random(a in (2usize..=3).prop_flat_map(|d| (Just(d), 0..=d)).prop_flat_map(|(d, j)| arb_form(d, j))) {
            let back = hodge_star(&hodge_star(&a));
            prop_assert!(back.max_abs_diff(&a.scaled(double_star_sign(a.dim(), a.degree()))) <= 1e-14);
        }
    }
}
