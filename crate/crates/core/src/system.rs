//! Assembly and solution of the decoupled method: a mixed problem for `w_h`, a generalized
//! Stokes problem for `(φ_h, p_h, r_h)` and a mixed problem for `u_h`.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{FeecError, Result};
use crate::fespaces::{build_space, diagonal_inner, FeSpace, FieldOp, SpaceKind};
use crate::linalg::{self, block_matrix, cg, minres, norm2, CsrMatrix, IterativeStats, SparseCholesky, SparseLu, TripletBuilder};
use crate::mesh::SimplicialMesh;
use crate::quadrature::simplex_rule;

/// Vector-valued field evaluated at a physical point, components in increasing-index order.
pub type Field<'a> = &'a (dyn Fn(&[f64]) -> Vec<f64> + Sync);

/// Integrand of a bilinear block; rows are test functions, columns trial functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// `(∇φ, ∇ψ)`
    GradGrad,
    /// `(dω, dμ)`
    DD,
    /// `(ω, μ)`
    Mass,
    /// `(v, dλ)`: trial `λ`, test `v`.
    DPair,
    /// `(dψ, q)`: trial `ψ`, test `q`.
    ExteriorPair,
    /// `(δs, q)`: trial `s`, test `q`.
    CodiffPair,
}

impl BlockKind {
    fn ops(self) -> (FieldOp, FieldOp) {
        match self {
            BlockKind::GradGrad => (FieldOp::Grad, FieldOp::Grad),
            BlockKind::DD => (FieldOp::D, FieldOp::D),
            BlockKind::Mass => (FieldOp::Value, FieldOp::Value),
            BlockKind::DPair => (FieldOp::D, FieldOp::Value),
            BlockKind::ExteriorPair => (FieldOp::D, FieldOp::Value),
            BlockKind::CodiffPair => (FieldOp::Codiff, FieldOp::Value),
        }
    }
}

/// An assembled bilinear form.
#[derive(Clone, Debug)]
pub struct BilinearBlock {
    pub kind: BlockKind,
    pub trial: Arc<FeSpace>,
    pub test: Arc<FeSpace>,
    pub matrix: CsrMatrix,
}

/// Assembles `kind` on `trial × test`. The quadrature is exact for the polynomial integrand
/// unless `degree` overrides it.
pub fn assemble(kind: BlockKind, trial: &Arc<FeSpace>, test: &Arc<FeSpace>, degree: Option<usize>) -> Result<BilinearBlock> {
    let (op_trial, op_test) = kind.ops();
    let matrix = assemble_pair(trial, op_trial, test, op_test, degree)?;
    Ok(BilinearBlock { kind, trial: trial.clone(), test: test.clone(), matrix })
}

/// `M[b][a] = ∫ ⟨op_trial φ_a, op_test ψ_b⟩`.
pub fn assemble_pair(trial: &FeSpace, op_trial: FieldOp, test: &FeSpace, op_test: FieldOp, degree: Option<usize>) -> Result<CsrMatrix> {
    if !Arc::ptr_eq(&trial.mesh, &test.mesh) {
        return Err(FeecError::Mesh("spaces live on different meshes".into()));
    }
    if trial.is_zero() || test.is_zero() {
        return Ok(CsrMatrix::zeros(test.num_dofs, trial.num_dofs));
    }
    let nt = trial.op_components(op_trial)?;
    let ns = test.op_components(op_test)?;
    if nt != ns {
        return Err(FeecError::DimensionMismatch(nt, ns));
    }
    let mesh = &trial.mesh;
    let deg = degree.unwrap_or(trial.op_degree(op_trial) + test.op_degree(op_test));
    let rule = simplex_rule(mesh.dim, deg);
    let tt = trial.tabulate_all(op_trial, &rule)?;
    let ts = test.tabulate_all(op_test, &rule)?;

    // cells of one translation class share their local matrix
    let mut local = Vec::with_capacity(mesh.num_classes());
    for (class, &rep) in mesh.class_representative.iter().enumerate() {
        let vol = mesh.geometry(rep).measure;
        let (a, b) = (&tt[class], &ts[class]);
        let mut m = vec![0.0; b.nfun * a.nfun];
        for p in 0..rule.len() {
            let w = rule.weights[p] * vol;
            for fb in 0..b.nfun {
                let vb = b.at(p, fb);
                for fa in 0..a.nfun {
                    let va = a.at(p, fa);
                    let s: f64 = vb.iter().zip(va).map(|(x, y)| x * y).sum();
                    m[fb * a.nfun + fa] += w * s;
                }
            }
        }
        let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        for v in &mut m {
            if v.abs() <= 1e-14 * scale {
                *v = 0.0;
            }
        }
        local.push((a.nfun, m));
    }
    let nnz_local: usize = local.iter().map(|(_, m)| m.iter().filter(|v| **v != 0.0).count()).max().unwrap_or(0);
    let mut builder = TripletBuilder::with_capacity(test.num_dofs, trial.num_dofs, nnz_local * mesh.num_cells());
    for c in 0..mesh.num_cells() {
        let (na, m) = &local[mesh.cell_class[c]];
        let rows = test.cell_dofs(c);
        let cols = trial.cell_dofs(c);
        for (b, &gb) in rows.iter().enumerate() {
            if FeSpace::is_constrained(gb) {
                continue;
            }
            for (a, &ga) in cols.iter().enumerate() {
                let v = m[b * na + a];
                if v != 0.0 && !FeSpace::is_constrained(ga) {
                    builder.push(gb, ga, v);
                }
            }
        }
    }
    Ok(builder.build())
}

/// `F[b] = ∫ ⟨f, op ψ_b⟩`, integrated with a rule of the given degree.
pub fn assemble_load(test: &FeSpace, op: FieldOp, f: Field<'_>, degree: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; test.num_dofs];
    if test.is_zero() {
        return Ok(out);
    }
    let mesh = &test.mesh;
    let rule = simplex_rule(mesh.dim, degree);
    let tables = test.tabulate_all(op, &rule)?;
    let mut x = vec![0.0; mesh.dim];
    let mut local = vec![0.0; test.local_dim];
    for c in 0..mesh.num_cells() {
        let t = &tables[mesh.cell_class[c]];
        let verts = &mesh.sorted_cells[c];
        let vol = mesh_cell_measure(mesh, c);
        local.iter_mut().for_each(|v| *v = 0.0);
        for (p, bary) in rule.points.iter().enumerate() {
            for (k, xk) in x.iter_mut().enumerate() {
                *xk = verts.iter().zip(bary).map(|(&v, l)| l * mesh.vertices[v][k]).sum();
            }
            let fx = f(&x);
            let w = rule.weights[p] * vol;
            for (fb, lv) in local.iter_mut().enumerate() {
                let vb = t.at(p, fb);
                *lv += w * vb.iter().zip(&fx).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        for (i, &g) in test.cell_dofs(c).iter().enumerate() {
            if !FeSpace::is_constrained(g) {
                out[g] += local[i];
            }
        }
    }
    Ok(out)
}

pub(crate) fn mesh_cell_measure(mesh: &SimplicialMesh, c: usize) -> f64 {
    let pts: Vec<Vec<f64>> = mesh.sorted_cells[c].iter().map(|&v| mesh.vertices[v].clone()).collect();
    crate::mesh::simplex_measure(&pts)
}

/// Linear solver selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverKind {
    /// Sparse direct below the size threshold, iterative above.
    Auto,
    Direct,
    /// Conjugate gradients for SPD systems, MINRES for the Stokes system.
    Iterative,
}

/// Solver settings.
#[derive(Clone, Debug)]
pub struct SolverConfig {
    pub solver: SolverKind,
    pub rtol: f64,
    pub max_iter: usize,
    /// Overrides the exact-integration degree of bilinear blocks.
    pub quadrature_degree: Option<usize>,
    /// Degree of the rule used for loads with non-polynomial data on fine meshes; see
    /// [`SolverConfig::load_degree_on`].
    pub load_degree: usize,
    /// Eliminates multipliers through the diagonal inner product; off selects the saddle
    /// systems with full mass matrices.
    pub eliminate: bool,
    pub direct_threshold: usize,
    /// Relative bound on recovered multipliers.
    pub tol_mult: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solver: SolverKind::Auto,
            rtol: 1e-10,
            max_iter: 20_000,
            quadrature_degree: None,
            load_degree: 10,
            eliminate: true,
            direct_threshold: 20_000,
            tol_mult: 1e-6,
        }
    }
}

impl SolverConfig {
    /// Load rule degree on `mesh`: `load_degree`, raised by 6 per halving of the cell size
    /// above `h = sqrt(d) / 8`. Smooth but oscillatory data would otherwise leave a quadrature
    /// error on coarse meshes that breaks the discrete compatibility `(f, dη) = 0` well above
    /// the solver tolerance.
    pub fn load_degree_on(&self, mesh: &SimplicialMesh) -> usize {
        let cells_per_unit = (mesh.dim as f64).sqrt() / mesh.h();
        let coarse = (3.0 - cells_per_unit.log2()).max(0.0).ceil() as usize;
        self.load_degree + 6 * coarse
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.rtol <= 1e-4) {
            return Err(FeecError::Unsupported(format!("relative tolerance {} outside (0, 1e-4]", self.rtol)));
        }
        Ok(())
    }

    fn use_direct(&self, n: usize) -> bool {
        match self.solver {
            SolverKind::Direct => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => n <= self.direct_threshold,
        }
    }
}

/// Record of one linear solve.
#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub method: String,
    pub size: usize,
    pub iterations: usize,
    /// `‖b − Ax‖ / ‖b‖` of the system actually solved.
    pub relative_residual: f64,
    pub seconds: f64,
}

fn relative_residual(apply: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], b: &[f64]) -> f64 {
    let ax = apply(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(a, b)| b - a).collect();
    let bn = norm2(b);
    if bn == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / bn
    }
}

fn check_iterative(stats: &IterativeStats, what: &str) -> Result<()> {
    if !stats.converged {
        return Err(FeecError::SolverFailure(format!(
            "{what} did not converge: relative residual {:.3e} after {} iterations",
            stats.relative_residual, stats.iterations
        )));
    }
    Ok(())
}

/// Solves an SPD system by sparse Cholesky or Jacobi-preconditioned CG.
pub fn solve_spd(a: &CsrMatrix, b: &[f64], cfg: &SolverConfig) -> Result<(Vec<f64>, SolveStats)> {
    let start = Instant::now();
    let n = a.nrows;
    if n == 0 {
        return Ok((Vec::new(), SolveStats { method: "empty".into(), ..Default::default() }));
    }
    let (x, method, iterations) = if cfg.use_direct(n) {
        let chol = SparseCholesky::new(a)?;
        (chol.solve(b), "cholesky", 0)
    } else {
        let inv_diag: Vec<f64> = a.diag().iter().map(|d| 1.0 / d).collect();
        let (x, stats) = cg(|v| a.matvec(v), |r| r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect(), b, cfg.rtol, cfg.max_iter);
        check_iterative(&stats, "conjugate gradients")?;
        (x, "cg+jacobi", stats.iterations)
    };
    let rel = relative_residual(|v| a.matvec(v), &x, b);
    Ok((x, SolveStats { method: method.into(), size: n, iterations, relative_residual: rel, seconds: start.elapsed().as_secs_f64() }))
}

/// All spaces of the method for one `(mesh, k, j)`.
#[derive(Clone, Debug)]
pub struct DecoupledSpaces {
    pub k: usize,
    pub j: usize,
    /// `V̊^d_kΛ^j`
    pub w: Arc<FeSpace>,
    /// `V̊^{d,-}_{k+1}Λ^{j-1}`
    pub lambda: Arc<FeSpace>,
    /// `Φ_h`
    pub phi: Arc<FeSpace>,
    /// `V^{δ,-}_kΛ^{j+2}`
    pub p: Arc<FeSpace>,
    /// `V^{δ,-}_kΛ^{j+3}`, the constants when `j = d-2`.
    pub r: Arc<FeSpace>,
    /// `V̊^{d,-}_{k+1}Λ^j`
    pub u: Arc<FeSpace>,
    /// `V̊^{d,-}_{k+1}Λ^{j-1}`
    pub z: Arc<FeSpace>,
}

impl DecoupledSpaces {
    pub fn new(mesh: &Arc<SimplicialMesh>, k: usize, j: usize) -> Result<Self> {
        let d = mesh.dim;
        if j >= d {
            return Err(FeecError::InvalidDegree { op: "decoupled method", degree: j, dim: d });
        }
        if k == 0 {
            return Err(FeecError::Unsupported("k must be at least 1".into()));
        }
        let zero = |deg| build_space(SpaceKind::Zero, k, deg, mesh.clone(), true);
        let below = |kind, kk| if j == 0 { zero(0) } else { build_space(kind, kk, j - 1, mesh.clone(), true) };
        let w = build_space(SpaceKind::Full, k, j, mesh.clone(), true)?;
        let lambda = below(SpaceKind::Trimmed, k + 1)?;
        let phi = build_space(SpaceKind::Phi, k, j, mesh.clone(), true)?;
        let p = build_space(SpaceKind::StarTrimmed, k, j + 2, mesh.clone(), false)?;
        let r = if j + 3 == d + 1 {
            build_space(SpaceKind::Constants, k, d + 1, mesh.clone(), false)?
        } else {
            build_space(SpaceKind::StarTrimmed, k, j + 3, mesh.clone(), false)?
        };
        let u = build_space(SpaceKind::Trimmed, k + 1, j, mesh.clone(), true)?;
        let z = below(SpaceKind::Trimmed, k + 1)?;
        Ok(Self { k, j, w, lambda, phi, p, r, u, z })
    }

    pub fn mesh(&self) -> &Arc<SimplicialMesh> {
        &self.w.mesh
    }
}

/// Which mixed problem of the method is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DarcyStep {
    /// `(dw, dv) + (v, dλ) = (f, v)`, `(w, dη) − ⟨λ, η⟩_D = 0`.
    First,
    /// `(du, dχ) + (χ, dz) = (φ_h, dχ)`, `(u, dμ) − ⟨z, μ⟩_D = (g, μ)`.
    Third,
}

/// Solution of a mixed problem.
#[derive(Clone, Debug)]
pub struct MixedSolution {
    pub primal: Vec<f64>,
    pub multiplier: Vec<f64>,
    /// `‖multiplier‖_D`
    pub multiplier_norm: f64,
    pub stats: SolveStats,
}

/// Solves a mixed problem given its assembled right-hand sides: `rhs_primal[i] = ℓ(v_i)` and
/// `rhs_mult[i] = (g, μ_i)`.
pub fn solve_mixed_darcy(
    step: DarcyStep,
    spaces: &DecoupledSpaces,
    rhs_primal: &[f64],
    rhs_mult: &[f64],
    cfg: &SolverConfig,
) -> Result<MixedSolution> {
    let (primal, mult) = match step {
        DarcyStep::First => (&spaces.w, &spaces.lambda),
        DarcyStep::Third => (&spaces.u, &spaces.z),
    };
    solve_mixed(primal, mult, rhs_primal, rhs_mult, cfg)
}

/// Mixed problem `(dσ, dv) + (v, dμ) = F`, `(σ, dη) − ⟨μ, η⟩ = G` on arbitrary spaces.
pub fn solve_mixed(primal: &Arc<FeSpace>, mult: &Arc<FeSpace>, rhs_primal: &[f64], rhs_mult: &[f64], cfg: &SolverConfig) -> Result<MixedSolution> {
    cfg.validate()?;
    let q = cfg.quadrature_degree;
    let a = assemble(BlockKind::DD, primal, primal, q)?.matrix;
    // B[η][σ] = (σ, dη)
    let b = assemble_pair(primal, FieldOp::Value, mult, FieldOp::D, q)?;
    let dinner = diagonal_inner(mult)?;
    if cfg.eliminate {
        let dinv: Vec<f64> = dinner.weights.iter().map(|w| 1.0 / w).collect();
        let dinv_b = b.scale_rows(&dinv);
        let s = a.add_scaled(&b.transpose().mul(&dinv_b), 1.0);
        let dg: Vec<f64> = rhs_mult.iter().zip(&dinv).map(|(g, d)| g * d).collect();
        let mut rhs = rhs_primal.to_vec();
        for (r, v) in rhs.iter_mut().zip(b.matvec_transpose(&dg)) {
            *r += v;
        }
        let (x, stats) = solve_spd(&s, &rhs, cfg)?;
        let bx = b.matvec(&x);
        let multiplier: Vec<f64> = bx.iter().zip(rhs_mult).zip(&dinv).map(|((bx, g), d)| (bx - g) * d).collect();
        let multiplier_norm = dinner.norm(&multiplier);
        Ok(MixedSolution { primal: x, multiplier, multiplier_norm, stats })
    } else {
        let start = Instant::now();
        let m = assemble(BlockKind::Mass, mult, mult, q)?.matrix.scaled(-1.0);
        let bt = b.transpose();
        let (n1, n2) = (primal.num_dofs, mult.num_dofs);
        let k = block_matrix(&[vec![Some(&a), Some(&bt)], vec![Some(&b), Some(&m)]], &[n1, n2], &[n1, n2]);
        let mut rhs = rhs_primal.to_vec();
        rhs.extend_from_slice(rhs_mult);
        let x = SparseLu::new(&k)?.solve(&rhs)?;
        let rel = relative_residual(|v| k.matvec(v), &x, &rhs);
        let multiplier = x[n1..].to_vec();
        let multiplier_norm = dinner.norm(&multiplier);
        Ok(MixedSolution {
            primal: x[..n1].to_vec(),
            multiplier,
            multiplier_norm,
            stats: SolveStats { method: "lu (full mass)".into(), size: n1 + n2, iterations: 0, relative_residual: rel, seconds: start.elapsed().as_secs_f64() },
        })
    }
}

/// Solution of the generalized Stokes problem.
#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    /// `‖r_h‖_D`
    pub r_norm: f64,
    /// Mean-value multiplier of the `j = d-1` branch.
    pub mean_multiplier: f64,
    pub stats: SolveStats,
}

/// Assembled operators of the generalized Stokes problem.
struct StokesOperators {
    k: CsrMatrix,
    /// rows `p`, columns `φ`: `(dψ, q)`
    b_phi: CsrMatrix,
    /// rows `p`, columns `r`: `(δs, q)`
    b_r: CsrMatrix,
    d_r: Vec<f64>,
    d_p: Vec<f64>,
}

fn stokes_operators(spaces: &DecoupledSpaces, cfg: &SolverConfig) -> Result<StokesOperators> {
    let q = cfg.quadrature_degree;
    let k = assemble(BlockKind::GradGrad, &spaces.phi, &spaces.phi, q)?.matrix;
    let b_phi = assemble(BlockKind::ExteriorPair, &spaces.phi, &spaces.p, q)?.matrix;
    let b_r = assemble(BlockKind::CodiffPair, &spaces.r, &spaces.p, q)?.matrix;
    let d_r = if spaces.r.is_zero() { Vec::new() } else { diagonal_inner(&spaces.r)?.weights };
    let d_p = if spaces.p.is_zero() { Vec::new() } else { diagonal_inner(&spaces.p)?.weights };
    Ok(StokesOperators { k, b_phi, b_r, d_r, d_p })
}

/// Solves `(∇φ,∇ψ) + ⟨r,s⟩_D + (dψ + δs, p) = (dw_h, ψ)`, `(dφ + δr, q) = 0`.
pub fn solve_generalized_stokes(spaces: &DecoupledSpaces, w: &[f64], cfg: &SolverConfig) -> Result<StokesSolution> {
    cfg.validate()?;
    // (dw_h, ψ)
    let load = assemble_pair(&spaces.w, FieldOp::D, &spaces.phi, FieldOp::Value, cfg.quadrature_degree)?.matvec(w);
    solve_stokes_with_load(spaces, &load, cfg)
}

/// Generalized Stokes problem with an assembled load `F[i] = ℓ(ψ_i)`.
pub fn solve_stokes_with_load(spaces: &DecoupledSpaces, load: &[f64], cfg: &SolverConfig) -> Result<StokesSolution> {
    let start = Instant::now();
    let ops = stokes_operators(spaces, cfg)?;
    let (nphi, np, nr) = (spaces.phi.num_dofs, spaces.p.num_dofs, spaces.r.num_dofs);

    if spaces.p.is_zero() {
        // Poisson problem on Φ_h ∩ L²_0: Kφ + μm = F, mᵀφ = 0
        let one = |_: &[f64]| vec![1.0];
        let m = assemble_load(&spaces.phi, FieldOp::Value, &one, spaces.phi.op_degree(FieldOp::Value))?;
        let (x, s1) = solve_spd(&ops.k, load, cfg)?;
        let (y, s2) = solve_spd(&ops.k, &m, cfg)?;
        let mu = linalg::dot(&m, &x) / linalg::dot(&m, &y);
        let phi: Vec<f64> = x.iter().zip(&y).map(|(x, y)| x - mu * y).collect();
        let rel = {
            let kphi = ops.k.matvec(&phi);
            let r: Vec<f64> = kphi.iter().zip(&m).zip(load).map(|((k, m), f)| f - k - mu * m).collect();
            norm2(&r) / norm2(load).max(f64::MIN_POSITIVE)
        };
        return Ok(StokesSolution {
            phi,
            p: Vec::new(),
            r: Vec::new(),
            r_norm: 0.0,
            mean_multiplier: mu,
            stats: SolveStats {
                method: format!("{} (mean-zero Poisson)", s1.method),
                size: nphi,
                iterations: s1.iterations + s2.iterations,
                relative_residual: rel,
                seconds: start.elapsed().as_secs_f64(),
            },
        });
    }

    let constants = spaces.r.kind == SpaceKind::Constants;
    let n_elim = nphi + np;
    let mut rhs = load.to_vec();
    rhs.resize(n_elim, 0.0);

    if !cfg.eliminate || (cfg.use_direct(n_elim) && constants) {
        // keep r: [[K, 0, B_φᵀ], [0, M_r, B_rᵀ], [B_φ, B_r, 0]]
        let mr = if cfg.eliminate || constants {
            CsrMatrix::diagonal(&ops.d_r)
        } else {
            assemble(BlockKind::Mass, &spaces.r, &spaces.r, cfg.quadrature_degree)?.matrix
        };
        let bpt = ops.b_phi.transpose();
        let brt = ops.b_r.transpose();
        let sys = block_matrix(
            &[vec![Some(&ops.k), None, Some(&bpt)], vec![None, Some(&mr), Some(&brt)], vec![Some(&ops.b_phi), Some(&ops.b_r), None]],
            &[nphi, nr, np],
            &[nphi, nr, np],
        );
        let mut b = load.to_vec();
        b.resize(nphi + nr + np, 0.0);
        let x = SparseLu::new(&sys)?.solve(&b)?;
        let rel = relative_residual(|v| sys.matvec(v), &x, &b);
        let r = x[nphi..nphi + nr].to_vec();
        let r_norm = r.iter().zip(&ops.d_r).map(|(r, d)| r * r * d).sum::<f64>().sqrt();
        let method = if cfg.eliminate { "lu (bordered)" } else { "lu (full mass)" };
        return Ok(StokesSolution {
            phi: x[..nphi].to_vec(),
            p: x[nphi + nr..].to_vec(),
            r,
            r_norm,
            mean_multiplier: 0.0,
            stats: SolveStats { method: method.into(), size: sys.nrows, iterations: 0, relative_residual: rel, seconds: start.elapsed().as_secs_f64() },
        });
    }

    let dr_inv: Vec<f64> = ops.d_r.iter().map(|d| 1.0 / d).collect();
    let apply_c = |x: &[f64]| -> Vec<f64> {
        let t: Vec<f64> = ops.b_r.matvec_transpose(x).iter().zip(&dr_inv).map(|(a, b)| a * b).collect();
        ops.b_r.matvec(&t)
    };
    let apply = |x: &[f64]| -> Vec<f64> {
        let (xphi, xp) = x.split_at(nphi);
        let mut top = ops.k.matvec(xphi);
        for (t, v) in top.iter_mut().zip(ops.b_phi.matvec_transpose(xp)) {
            *t += v;
        }
        let mut bottom = ops.b_phi.matvec(xphi);
        for (b, c) in bottom.iter_mut().zip(apply_c(xp)) {
            *b -= c;
        }
        top.extend(bottom);
        top
    };

    let (x, method, iterations) = if cfg.use_direct(n_elim) {
        let c = ops.b_r.mul(&CsrMatrix::diagonal(&dr_inv)).mul(&ops.b_r.transpose());
        let neg_c = c.scaled(-1.0);
        let bpt = ops.b_phi.transpose();
        let sys = block_matrix(&[vec![Some(&ops.k), Some(&bpt)], vec![Some(&ops.b_phi), Some(&neg_c)]], &[nphi, np], &[nphi, np]);
        (SparseLu::new(&sys)?.solve(&rhs)?, "lu", 0)
    } else {
        let kchol = SparseCholesky::new(&ops.k)?;
        // (D_p + B_r D_r⁻¹ B_rᵀ)⁻¹ by the Woodbury identity
        let dp_inv: Vec<f64> = ops.d_p.iter().map(|d| 1.0 / d).collect();
        let inner = CsrMatrix::diagonal(&ops.d_r).add_scaled(&ops.b_r.transpose().mul(&ops.b_r.scale_rows(&dp_inv)), 1.0);
        let inner_chol = SparseCholesky::new(&inner)?;
        let precond = |v: &[f64]| -> Vec<f64> {
            let (vphi, vp) = v.split_at(nphi);
            let mut out = kchol.solve(vphi);
            let y: Vec<f64> = vp.iter().zip(&dp_inv).map(|(a, b)| a * b).collect();
            let t = inner_chol.solve(&ops.b_r.matvec_transpose(&y));
            let corr = ops.b_r.matvec(&t);
            out.extend(y.iter().zip(&corr).zip(&dp_inv).map(|((y, c), d)| y - c * d));
            out
        };
        let (x, stats) = minres(apply, precond, &rhs, cfg.rtol, cfg.max_iter);
        check_iterative(&stats, "MINRES")?;
        (x, "minres+block-diagonal", stats.iterations)
    };
    let rel = relative_residual(apply, &x, &rhs);
    let p = x[nphi..].to_vec();
    let r: Vec<f64> = ops.b_r.matvec_transpose(&p).iter().zip(&dr_inv).map(|(a, b)| -a * b).collect();
    let r_norm = r.iter().zip(&ops.d_r).map(|(r, d)| r * r * d).sum::<f64>().sqrt();
    Ok(StokesSolution {
        phi: x[..nphi].to_vec(),
        p,
        r,
        r_norm,
        mean_multiplier: 0.0,
        stats: SolveStats { method: method.into(), size: n_elim, iterations, relative_residual: rel, seconds: start.elapsed().as_secs_f64() },
    })
}

/// Data of the fourth-order problem.
#[derive(Clone, Copy)]
pub struct ProblemData<'a> {
    /// `f`, a `j`-form with `δf = 0`.
    pub f: Field<'a>,
    /// `g = δu`, a `(j-1)`-form; `None` means zero.
    pub g: Option<Field<'a>>,
}

/// All discrete unknowns with diagnostics.
#[derive(Clone, Debug)]
pub struct DecoupledSolution {
    pub spaces: DecoupledSpaces,
    pub w: Vec<f64>,
    pub lambda: Vec<f64>,
    pub phi: Vec<f64>,
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda_norm: f64,
    pub r_norm: f64,
    pub z_norm: f64,
    /// `‖u_h‖` in the Euclidean coefficient norm scaled like the multipliers (diagonal norm).
    pub u_norm: f64,
    pub stats: Vec<SolveStats>,
    pub seconds: f64,
}

impl DecoupledSolution {
    /// `max(‖λ_h‖, ‖r_h‖, ‖z_h‖) / ‖u_h‖`, or the absolute maximum when `u_h = 0`.
    pub fn multiplier_ratio(&self) -> f64 {
        let m = self.lambda_norm.max(self.r_norm).max(self.z_norm);
        if self.u_norm > 0.0 {
            m / self.u_norm
        } else {
            m
        }
    }

    pub fn iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).sum()
    }
}

/// Runs the three stages on prebuilt spaces.
pub fn solve_fourth_order(spaces: &DecoupledSpaces, data: ProblemData<'_>, cfg: &SolverConfig) -> Result<DecoupledSolution> {
    cfg.validate()?;
    let start = Instant::now();
    let load_degree = cfg.load_degree_on(spaces.mesh());
    let f_load = assemble_load(&spaces.w, FieldOp::Value, data.f, load_degree)?;
    let zero_lambda = vec![0.0; spaces.lambda.num_dofs];
    let first = solve_mixed_darcy(DarcyStep::First, spaces, &f_load, &zero_lambda, cfg)?;

    let stokes = solve_generalized_stokes(spaces, &first.primal, cfg)?;

    // (φ_h, dχ)
    let u_load = assemble_pair(&spaces.phi, FieldOp::Value, &spaces.u, FieldOp::D, cfg.quadrature_degree)?.matvec(&stokes.phi);
    let g_load = match data.g {
        Some(g) => assemble_load(&spaces.z, FieldOp::Value, g, load_degree)?,
        None => vec![0.0; spaces.z.num_dofs],
    };
    let third = solve_mixed_darcy(DarcyStep::Third, spaces, &u_load, &g_load, cfg)?;

    let u_norm = diagonal_inner(&spaces.u)?.norm(&third.primal);
    let sol = DecoupledSolution {
        spaces: spaces.clone(),
        w: first.primal,
        lambda: first.multiplier,
        phi: stokes.phi,
        p: stokes.p,
        r: stokes.r,
        u: third.primal,
        z: third.multiplier,
        lambda_norm: first.multiplier_norm,
        r_norm: stokes.r_norm,
        z_norm: third.multiplier_norm,
        u_norm,
        stats: vec![first.stats, stokes.stats, third.stats],
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(sol)
}

/// Like [`solve_fourth_order`] but fails with an invariant violation when the recovered
/// multipliers exceed `cfg.tol_mult` relative to `u_h`.
pub fn solve_fourth_order_checked(spaces: &DecoupledSpaces, data: ProblemData<'_>, cfg: &SolverConfig) -> Result<DecoupledSolution> {
    let sol = solve_fourth_order(spaces, data, cfg)?;
    let ratio = sol.multiplier_ratio();
    if ratio > cfg.tol_mult {
        return Err(FeecError::InvariantViolation(format!("multiplier norm ratio {ratio:.3e} exceeds {:.1e}", cfg.tol_mult)));
    }
    Ok(sol)
}

/// Largest number of unknowns for which dense probes are attempted.
pub const DENSE_CAP: usize = 6000;

/// Discrete inf-sup constant `β_h = √λ_min` of `B A⁻¹ Bᵀ q = β² M_p q`, with `A` the
/// block-diagonal of `(∇φ, ∇ψ)` and `(r, s) + (δr, δs)`. Returns `None` when the pressure space
/// is zero (`j = d-1`).
pub fn infsup_probe(mesh: &Arc<SimplicialMesh>, k: usize, j: usize) -> Result<Option<f64>> {
    let spaces = DecoupledSpaces::new(mesh, k, j)?;
    if spaces.p.is_zero() {
        return Ok(None);
    }
    let (nphi, np, nr) = (spaces.phi.num_dofs, spaces.p.num_dofs, spaces.r.num_dofs);
    if nphi + nr + np > DENSE_CAP {
        return Err(FeecError::SizeCap { size: nphi + nr + np, cap: DENSE_CAP });
    }
    let cfg = SolverConfig::default();
    let ops = stokes_operators(&spaces, &cfg)?;
    let h_r = if spaces.r.kind == SpaceKind::Constants {
        // ‖1‖² + ‖δ1‖² = 2|Ω|
        DMatrix::from_element(1, 1, 2.0 * ops.d_r[0])
    } else {
        let m = assemble(BlockKind::Mass, &spaces.r, &spaces.r, None)?.matrix;
        let dd = assemble_pair(&spaces.r, FieldOp::Codiff, &spaces.r, FieldOp::Codiff, None)?;
        m.add_scaled(&dd, 1.0).to_dense()
    };
    let mp = assemble(BlockKind::Mass, &spaces.p, &spaces.p, None)?.matrix.to_dense();
    let kd = ops.k.to_dense();
    let bphi = ops.b_phi.to_dense();
    let br = ops.b_r.to_dense();
    let kchol = kd.cholesky().ok_or_else(|| FeecError::SolverFailure("stiffness not SPD".into()))?;
    let hchol = h_r.cholesky().ok_or_else(|| FeecError::SolverFailure("r-block not SPD".into()))?;
    let s1 = &bphi * kchol.solve(&bphi.transpose());
    let s2 = &br * hchol.solve(&br.transpose());
    let mut s = s1 + s2;
    s = (&s + s.transpose()) * 0.5;
    let eig = linalg::generalized_symmetric_eigenvalues(&s, &mp)?;
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(Some(min.max(0.0).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::box_mesh;

    #[test]
    fn lagrange_mass_row_sums() {
        let mesh = Arc::new(SimplicialMesh::from_cells(3, crate::mesh::CellGeometry::reference(3).vertices, vec![vec![0, 1, 2, 3]]).unwrap());
        let v = build_space(SpaceKind::Full, 1, 0, mesh, false).unwrap();
        let m = assemble(BlockKind::Mass, &v, &v, None).unwrap().matrix;
        for r in 0..4 {
            let s: f64 = m.row(r).map(|(_, x)| x).sum();
            assert!((s - 1.0 / 24.0).abs() < 1e-14);
        }
        assert!(m.symmetry_defect() < 1e-14);
    }

    #[test]
    fn gradgrad_kills_constants() {
        let mesh = box_mesh(2, 2).unwrap();
        let phi = build_space(SpaceKind::Phi, 1, 0, mesh, false).unwrap();
        let k = assemble(BlockKind::GradGrad, &phi, &phi, None).unwrap().matrix;
        let mut c = vec![0.0; phi.num_dofs];
        for cell in 0..phi.mesh.num_cells() {
            let elem = phi.element(cell);
            let field = crate::polyforms::PolynomialForm::constant(elem.geometry.clone(), &crate::exterior::AlternatingForm::basis_wedge(2, &[0]));
            for (dof, &g) in elem.dofs.iter().zip(phi.cell_dofs(cell)) {
                c[g] = dof.apply(&field);
            }
        }
        assert!(norm2(&c) > 1.0);
        assert!(norm2(&k.matvec(&c)) < 1e-12);
    }

    #[test]
    fn homogeneous_data_give_zero() {
        let mesh = box_mesh(2, 2).unwrap();
        let zero = |x: &[f64]| vec![0.0 * x[0]];
        for j in 0..2 {
            let spaces = DecoupledSpaces::new(&mesh, 1, j).unwrap();
            let zf = |x: &[f64]| vec![0.0 * x[0]; if j == 0 { 1 } else { 2 }];
            let sol = solve_fourth_order(&spaces, ProblemData { f: &zf, g: if j == 0 { None } else { Some(&zero) } }, &SolverConfig::default()).unwrap();
            for v in [&sol.w, &sol.lambda, &sol.phi, &sol.p, &sol.r, &sol.u, &sol.z] {
                assert!(v.iter().all(|x| x.abs() < 1e-14));
            }
        }
    }

    #[test]
    fn infsup_not_applicable_for_top_degree() {
        let mesh = box_mesh(2, 1).unwrap();
        assert!(infsup_probe(&mesh, 1, 1).unwrap().is_none());
        assert!(infsup_probe(&mesh, 1, 0).unwrap().unwrap() > 0.0);
    }

    #[test]
    fn config_rejects_loose_tolerance() {
        let cfg = SolverConfig { rtol: 1e-2, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
