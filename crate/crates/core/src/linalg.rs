//! Sparse matrices and the linear solvers used by the decoupled method.
//!
//! Direct factorizations are delegated to `faer`; the Krylov methods are written here because
//! they operate on block operators assembled from several sparse pieces.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use nalgebra::DMatrix;

use crate::error::{FeecError, Result};

/// Row-compressed sparse matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsrMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed in insertion order.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.nrows && c < self.ncols);
        self.entries.push((r, c, v));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(self) -> CsrMatrix {
        CsrMatrix::from_triplets(self.nrows, self.ncols, self.entries)
    }
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        Self {
            nrows: d.len(),
            ncols: d.len(),
            indptr: (0..=d.len()).collect(),
            indices: (0..d.len()).collect(),
            data: d.to_vec(),
        }
    }

    /// Builds from triplets, summing duplicates. Explicit zeros are kept so that the pattern
    /// does not depend on cancellation.
    pub fn from_triplets(nrows: usize, ncols: usize, mut entries: Vec<(usize, usize, f64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; nrows + 1];
        let mut indices = Vec::with_capacity(entries.len());
        let mut data = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *data.last_mut().expect("nonempty") += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, data }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut b = TripletBuilder::new(m.nrows(), m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    b.push(r, c, m[(r, c)]);
                }
            }
        }
        b.build()
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.indptr[r]..self.indptr[r + 1];
        self.indices[range.clone()].iter().copied().zip(self.data[range].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).filter(|(j, _)| *j == c).map(|(_, v)| v).sum()
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out.push((r, c, v));
            }
        }
        out
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            *yr = acc;
        }
    }

    /// `y = Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            for k in self.indptr[r]..self.indptr[r + 1] {
                y[self.indices[k]] += self.data[k] * xr;
            }
        }
        y
    }

    pub fn transpose(&self) -> Self {
        let entries = self.triplets().into_iter().map(|(r, c, v)| (c, r, v)).collect();
        Self::from_triplets(self.ncols, self.nrows, entries)
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut entries = self.triplets();
        entries.extend(other.triplets().into_iter().map(|(r, c, v)| (r, c, s * v)));
        Self::from_triplets(self.nrows, self.ncols, entries)
    }

    /// Sparse product `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut indptr = vec![0; self.nrows + 1];
        let mut indices = Vec::new();
        let mut data = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut mark = vec![usize::MAX; other.ncols];
        let mut cols = Vec::new();
        for r in 0..self.nrows {
            cols.clear();
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if mark[c] != r {
                        mark[c] = r;
                        acc[c] = 0.0;
                        cols.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                indices.push(c);
                data.push(acc[c]);
            }
            indptr[r + 1] = indices.len();
        }
        Self { nrows: self.nrows, ncols: other.ncols, indptr, indices, data }
    }

    /// Scales row `i` by `d[i]`.
    pub fn scale_rows(&self, d: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in out.indptr[r]..out.indptr[r + 1] {
                out.data[k] *= d[r];
            }
        }
        out
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    /// Largest entrywise asymmetry relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let diff = self.add_scaled(&t, -1.0);
        let top = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let worst = diff.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if top == 0.0 {
            0.0
        } else {
            worst / top
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Extracts the submatrix with the given rows and columns (both as index lists).
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (new, &old) in cols.iter().enumerate() {
            col_map[old] = new;
        }
        let mut b = TripletBuilder::new(rows.len(), cols.len());
        for (nr, &r) in rows.iter().enumerate() {
            for (c, v) in self.row(r) {
                if col_map[c] != usize::MAX {
                    b.push(nr, col_map[c], v);
                }
            }
        }
        b.build()
    }

    fn to_faer(&self, lower_only: bool) -> Result<SparseColMat<usize, f64>> {
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                if !lower_only || c <= r {
                    trip.push(Triplet::new(r, c, v));
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .map_err(|e| FeecError::SolverFailure(format!("sparse matrix creation failed: {e:?}")))
    }
}

/// Assembles a block matrix from optional blocks; `None` blocks are zero.
pub fn block_matrix(blocks: &[Vec<Option<&CsrMatrix>>], row_sizes: &[usize], col_sizes: &[usize]) -> CsrMatrix {
    let row_off: Vec<usize> = std::iter::once(0).chain(row_sizes.iter().scan(0, |s, &x| { *s += x; Some(*s) })).collect();
    let col_off: Vec<usize> = std::iter::once(0).chain(col_sizes.iter().scan(0, |s, &x| { *s += x; Some(*s) })).collect();
    let mut entries = Vec::new();
    for (bi, row) in blocks.iter().enumerate() {
        for (bj, blk) in row.iter().enumerate() {
            if let Some(m) = blk {
                assert_eq!((m.nrows, m.ncols), (row_sizes[bi], col_sizes[bj]), "block ({bi},{bj}) shape");
                for (r, c, v) in m.triplets() {
                    entries.push((r + row_off[bi], c + col_off[bj], v));
                }
            }
        }
    }
    CsrMatrix::from_triplets(row_off[row_sizes.len()], col_off[col_sizes.len()], entries)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Sparse Cholesky factorization of an SPD matrix.
pub struct SparseCholesky {
    n: usize,
    factor: Option<faer::sparse::linalg::solvers::Llt<usize, f64>>,
}

impl SparseCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows == 0 {
            return Ok(Self { n: 0, factor: None });
        }
        let m = a.to_faer(true)?;
        let factor = m
            .sp_cholesky(Side::Lower)
            .map_err(|e| FeecError::SolverFailure(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Self { n: a.nrows, factor: Some(factor) })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let Some(f) = &self.factor else { return Vec::new() };
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = f.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Sparse LU factorization with partial pivoting.
pub struct SparseLu {
    n: usize,
    factor: Option<faer::sparse::linalg::solvers::Lu<usize, f64>>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.nrows == 0 {
            return Ok(Self { n: 0, factor: None });
        }
        let m = a.to_faer(false)?;
        let factor = m
            .sp_lu()
            .map_err(|e| FeecError::SolverFailure(format!("LU factorization failed: {e:?}")))?;
        Ok(Self { n: a.nrows, factor: Some(factor) })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let Some(f) = &self.factor else { return Ok(Vec::new()) };
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = f.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(FeecError::SolverFailure("LU solve produced non-finite values (singular system)".into()));
        }
        Ok(out)
    }
}

/// Outcome of an iterative solve.
#[derive(Clone, Debug, Default)]
pub struct IterativeStats {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradients for SPD operators.
pub fn cg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (Vec<f64>, IterativeStats) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return (x, IterativeStats { iterations: 0, relative_residual: 0.0, converged: true });
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = 1.0;
    for it in 1..=max_iter {
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        res = norm2(&r) / bnorm;
        if res <= rtol {
            return (x, IterativeStats { iterations: it, relative_residual: res, converged: true });
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    (x, IterativeStats { iterations: max_iter, relative_residual: res, converged: false })
}

/// Preconditioned MINRES for symmetric (indefinite) operators with an SPD preconditioner.
/// Convergence is measured in the preconditioned residual norm relative to its initial value.
pub fn minres(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rtol: f64,
    max_iter: usize,
) -> (Vec<f64>, IterativeStats) {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = precond(&r1);
    let beta1 = dot(&r1, &y);
    if beta1 <= 0.0 {
        return (x, IterativeStats { iterations: 0, relative_residual: 0.0, converged: beta1 == 0.0 });
    }
    let beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let mut beta = beta1;
    let mut oldb = 0.0;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut rel = 1.0;
    for it in 1..=max_iter {
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| s * yi).collect();
        let mut yv = apply(&v);
        if it >= 2 {
            axpy(&mut yv, -beta / oldb, &r1);
        }
        let alfa = dot(&v, &yv);
        axpy(&mut yv, -alfa / beta, &r2);
        r1 = std::mem::replace(&mut r2, yv);
        y = precond(&r2);
        oldb = beta;
        let b2 = dot(&r2, &y);
        beta = if b2 > 0.0 { b2.sqrt() } else { 0.0 };

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = (gbar * gbar + beta * beta).sqrt().max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        let w1 = std::mem::take(&mut w2);
        w2 = std::mem::take(&mut w);
        w = (0..n).map(|i| (v[i] - oldeps * w1.get(i).copied().unwrap_or(0.0) - delta * w2[i]) * denom).collect();
        axpy(&mut x, phi, &w);

        rel = phibar.abs() / beta1;
        if rel <= rtol || beta == 0.0 {
            return (x, IterativeStats { iterations: it, relative_residual: rel, converged: true });
        }
    }
    (x, IterativeStats { iterations: max_iter, relative_residual: rel, converged: false })
}

/// Numerical rank of a dense matrix from its singular values.
pub fn dense_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let top = sv.iter().cloned().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Eigenvalues of the symmetric-definite pencil `A x = λ B x` (B SPD), ascending.
pub fn generalized_symmetric_eigenvalues(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Vec<f64>> {
    let chol = nalgebra::Cholesky::new(b.clone())
        .ok_or_else(|| FeecError::SolverFailure("right-hand matrix of the pencil is not SPD".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| FeecError::SolverFailure("singular Cholesky factor".into()))?;
    let c = &linv * a * linv.transpose();
    let sym = (&c + c.transpose()) * 0.5;
    let mut ev: Vec<f64> = nalgebra::SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}
