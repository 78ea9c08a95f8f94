use std::sync::Arc;

use decoupled_feec::fespaces::{build_space, diagonal_inner, FeSpace, FieldOp, SpaceKind};
use decoupled_feec::harness::{make_case, Problem};
use decoupled_feec::linalg::norm2;
use decoupled_feec::mesh::{box_mesh, SimplicialMesh};
use decoupled_feec::quadrature::simplex_rule;
use decoupled_feec::system::{
    assemble, assemble_load, assemble_pair, infsup_probe, solve_fourth_order, solve_mixed_darcy, solve_stokes_with_load, BlockKind, DarcyStep,
    DecoupledSpaces, ProblemData, SolverConfig, SolverKind,
};
use nalgebra::{DMatrix, DVector};

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm2(&d) / norm2(b).max(f64::MIN_POSITIVE)
}

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// P1 Poisson stiffness and load assembled from barycentric gradients, numbered by the
/// interior vertices of the mesh.
fn p1_poisson_oracle(mesh: &SimplicialMesh, f: &dyn Fn(&[f64]) -> f64) -> (Vec<usize>, DMatrix<f64>, DVector<f64>) {
    let interior: Vec<usize> = (0..mesh.num_vertices()).filter(|&v| !mesh.faces[0].boundary[v]).collect();
    let index = |v: usize| interior.iter().position(|&x| x == v);
    let n = interior.len();
    let mut k = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    let rule = simplex_rule(mesh.dim, 10);
    for c in 0..mesh.num_cells() {
        let g = mesh.geometry(c);
        let verts = &mesh.sorted_cells[c];
        for (a, &va) in verts.iter().enumerate() {
            let Some(ia) = index(va) else { continue };
            for (bb, &vb) in verts.iter().enumerate() {
                let Some(ib) = index(vb) else { continue };
                let dot: f64 = g.grads[a].iter().zip(&g.grads[bb]).map(|(x, y)| x * y).sum();
                k[(ib, ia)] += g.measure * dot;
            }
            for (p, bary) in rule.points.iter().enumerate() {
                b[ia] += g.measure * rule.weights[p] * bary[a] * f(&g.point(bary));
            }
        }
    }
    (interior, k, b)
}

#[test]
fn first_step_for_biharmonic_is_p1_poisson() {
    let mesh = box_mesh(3, 3).unwrap();
    let spaces = DecoupledSpaces::new(&mesh, 1, 0).unwrap();
    let case = make_case(Problem::Biharmonic, 3).unwrap();
    let f = |x: &[f64]| case.f.eval(x);
    let load = assemble_load(&spaces.w, FieldOp::Value, &f, 10).unwrap();
    let sol = solve_mixed_darcy(DarcyStep::First, &spaces, &load, &[], &SolverConfig::default()).unwrap();
    assert!(sol.multiplier.is_empty());

    let (interior, k, b) = p1_poisson_oracle(&mesh, &|x| case.f.eval(x)[0]);
    let oracle = k.lu().solve(&b).unwrap();
    // the ring Lagrange space numbers its DoFs by interior vertex in increasing order
    for (i, &v) in interior.iter().enumerate() {
        let g = spaces.w.dof_location.iter().position(|&(l, id)| l == 0 && id == v).unwrap();
        assert!((sol.primal[g] - oracle[i]).abs() <= 1e-9 * oracle.amax(), "vertex {v}");
    }
}

#[test]
fn eliminated_and_full_saddle_systems_agree() {
    for (problem, dim) in [(Problem::Biharmonic, 2), (Problem::QuadCurl, 3), (Problem::FourthDiv, 2)] {
        let case = make_case(problem, dim).unwrap();
        let spaces = DecoupledSpaces::new(&box_mesh(dim, 2).unwrap(), 1, case.j).unwrap();
        let a = case.solve(&spaces, &SolverConfig::default()).unwrap();
        let b = case.solve(&spaces, &SolverConfig { eliminate: false, ..Default::default() }).unwrap();
        assert!(rel_diff(&a.w, &b.w) < 1e-8, "{problem:?} w");
        // p vanishes up to round-off, so it is measured against the Stokes-stage scale
        let stokes = |s: &decoupled_feec::system::DecoupledSolution| [s.phi.as_slice(), s.p.as_slice()].concat();
        assert!(rel_diff(&stokes(&a), &stokes(&b)) < 1e-8, "{problem:?} (φ, p)");
        assert!(rel_diff(&a.u, &b.u) < 1e-8, "{problem:?} u");
    }
}

#[test]
fn first_step_is_galerkin_orthogonal() {
    let case = make_case(Problem::QuadCurl, 3).unwrap();
    let spaces = DecoupledSpaces::new(&box_mesh(3, 2).unwrap(), 1, 1).unwrap();
    let f = |x: &[f64]| case.f.eval(x);
    let cfg = SolverConfig::default();
    let load = assemble_load(&spaces.w, FieldOp::Value, &f, cfg.load_degree_on(spaces.mesh())).unwrap();
    let zero = vec![0.0; spaces.lambda.num_dofs];
    let sol = solve_mixed_darcy(DarcyStep::First, &spaces, &load, &zero, &cfg).unwrap();
    let a = assemble(BlockKind::DD, &spaces.w, &spaces.w, None).unwrap().matrix;
    let aw = a.matvec(&sol.primal);
    let residual: Vec<f64> = load.iter().zip(&aw).map(|(f, a)| f - a).collect();
    assert!(norm2(&residual) <= 1e-8 * norm2(&load), "{}", norm2(&residual) / norm2(&load));
    assert!(sol.multiplier_norm <= 1e-8 * diagonal_inner(&spaces.w).unwrap().norm(&sol.primal));
}

#[test]
fn eliminated_systems_are_spd() {
    let spaces = DecoupledSpaces::new(&box_mesh(3, 2).unwrap(), 1, 1).unwrap();
    for (primal, mult) in [(&spaces.w, &spaces.lambda), (&spaces.u, &spaces.z)] {
        let a = assemble(BlockKind::DD, primal, primal, None).unwrap().matrix;
        let b = assemble_pair(primal, FieldOp::Value, mult, FieldOp::D, None).unwrap();
        let dinv: Vec<f64> = diagonal_inner(mult).unwrap().weights.iter().map(|w| 1.0 / w).collect();
        let s = a.add_scaled(&b.transpose().mul(&b.scale_rows(&dinv)), 1.0);
        assert!(s.symmetry_defect() < 1e-12);
        let eig = s.to_dense().symmetric_eigenvalues();
        assert!(eig.min() > 0.0);
    }
}

#[test]
fn symmetric_blocks_are_symmetric() {
    let mesh = box_mesh(3, 2).unwrap();
    let phi = build_space(SpaceKind::Phi, 1, 1, mesh.clone(), true).unwrap();
    let e = build_space(SpaceKind::Full, 2, 1, mesh, true).unwrap();
    for (kind, space) in [(BlockKind::GradGrad, &phi), (BlockKind::Mass, &phi), (BlockKind::DD, &e), (BlockKind::Mass, &e)] {
        let m = assemble(kind, space, space, None).unwrap().matrix;
        assert!(m.symmetry_defect() <= 1e-12 * m.max_abs(), "{kind:?}");
    }
}

#[test]
fn stokes_stage_matches_dense_oracle() {
    // j = 1, d = 3: the MINI element with pressure in ⋆P_1 and a single real r
    let spaces = DecoupledSpaces::new(&box_mesh(3, 1).unwrap(), 1, 1).unwrap();
    assert_eq!(spaces.r.kind, SpaceKind::Constants);
    let load = pseudo_random(spaces.phi.num_dofs, 5);
    let sol = solve_stokes_with_load(&spaces, &load, &SolverConfig::default()).unwrap();

    let k = assemble(BlockKind::GradGrad, &spaces.phi, &spaces.phi, None).unwrap().matrix.to_dense();
    let bphi = assemble(BlockKind::ExteriorPair, &spaces.phi, &spaces.p, None).unwrap().matrix.to_dense();
    let br = assemble(BlockKind::CodiffPair, &spaces.r, &spaces.p, None).unwrap().matrix.to_dense();
    let vol = diagonal_inner(&spaces.r).unwrap().weights[0];
    assert!((vol - 1.0).abs() < 1e-14);
    let (n1, np) = (spaces.phi.num_dofs, spaces.p.num_dofs);
    let n = n1 + 1 + np;
    let mut m = DMatrix::zeros(n, n);
    m.view_mut((0, 0), (n1, n1)).copy_from(&k);
    m[(n1, n1)] = vol;
    m.view_mut((n1 + 1, 0), (np, n1)).copy_from(&bphi);
    m.view_mut((0, n1 + 1), (n1, np)).copy_from(&bphi.transpose());
    m.view_mut((n1 + 1, n1), (np, 1)).copy_from(&br);
    m.view_mut((n1, n1 + 1), (1, np)).copy_from(&br.transpose());
    let mut rhs = DVector::zeros(n);
    rhs.rows_mut(0, n1).copy_from_slice(&load);
    let x = m.lu().solve(&rhs).unwrap();
    let oracle_phi: Vec<f64> = x.rows(0, n1).iter().cloned().collect();
    let oracle_p: Vec<f64> = x.rows(n1 + 1, np).iter().cloned().collect();
    assert!(rel_diff(&sol.phi, &oracle_phi) < 1e-10);
    assert!(rel_diff(&sol.p, &oracle_p) < 1e-10);
    assert!(x[n1].abs() < 1e-10 * x.amax());
    assert!(sol.r_norm < 1e-10 * norm2(&sol.phi));
}

/// `(dψ, q) = -(v, ∇q)` for the divergence-type pairing of the MINI element, `v` the vector
/// proxy of the 2-form `ψ`.
#[test]
fn stokes_pairing_is_the_mini_divergence_block() {
    let mesh = box_mesh(3, 2).unwrap();
    let spaces = DecoupledSpaces::new(&mesh, 1, 1).unwrap();
    let b = assemble(BlockKind::ExteriorPair, &spaces.phi, &spaces.p, None).unwrap().matrix;
    assert_eq!(spaces.p.num_dofs, mesh.num_vertices());

    let rule = simplex_rule(3, 4);
    let tv = spaces.phi.tabulate_all(FieldOp::Value, &rule).unwrap();
    let tq = spaces.p.tabulate_all(FieldOp::Grad, &rule).unwrap();
    let mut oracle = DMatrix::<f64>::zeros(spaces.p.num_dofs, spaces.phi.num_dofs);
    for c in 0..mesh.num_cells() {
        let class = mesh.cell_class[c];
        let vol = mesh.geometry(c).measure;
        for p in 0..rule.len() {
            for (fq, &gq) in spaces.p.cell_dofs(c).iter().enumerate() {
                let grad = tq[class].at(p, fq);
                for (fv, &gv) in spaces.phi.cell_dofs(c).iter().enumerate() {
                    if FeSpace::is_constrained(gv) {
                        continue;
                    }
                    let psi = tv[class].at(p, fv);
                    // components ψ12, ψ13, ψ23 ↦ v = (ψ23, -ψ13, ψ12)
                    let v = [psi[2], -psi[1], psi[0]];
                    let dot: f64 = v.iter().zip(grad).map(|(a, b)| a * b).sum();
                    oracle[(gq, gv)] -= rule.weights[p] * vol * dot;
                }
            }
        }
    }
    let diff = (b.to_dense() - &oracle).amax();
    assert!(diff <= 1e-12 * oracle.amax(), "{diff}");
}

#[test]
fn direct_and_iterative_solvers_agree() {
    let case = make_case(Problem::Biharmonic, 3).unwrap();
    let spaces = DecoupledSpaces::new(&box_mesh(3, 4).unwrap(), 1, 0).unwrap();
    let direct = case.solve(&spaces, &SolverConfig { solver: SolverKind::Direct, ..Default::default() }).unwrap();
    let iterative = case.solve(&spaces, &SolverConfig { solver: SolverKind::Iterative, ..Default::default() }).unwrap();
    assert!(iterative.iterations() > 0);
    assert!(rel_diff(&iterative.u, &direct.u) < 1e-7);
    assert!(rel_diff(&iterative.phi, &direct.phi) < 1e-7);
}

#[test]
fn zero_data_give_zero_solution_in_every_degree() {
    for dim in [2, 3] {
        let mesh = box_mesh(dim, 2).unwrap();
        for j in 0..dim {
            let spaces = DecoupledSpaces::new(&mesh, 1, j).unwrap();
            let nf = decoupled_feec::combinatorics::binomial(dim, j);
            let f = move |_: &[f64]| vec![0.0; nf];
            let ng = if j == 0 { 0 } else { decoupled_feec::combinatorics::binomial(dim, j - 1) };
            let g = move |_: &[f64]| vec![0.0; ng];
            let data = ProblemData { f: &f, g: if j == 0 { None } else { Some(&g) } };
            let sol = solve_fourth_order(&spaces, data, &SolverConfig::default()).unwrap();
            for v in [&sol.w, &sol.lambda, &sol.phi, &sol.p, &sol.r, &sol.u, &sol.z] {
                assert!(v.iter().all(|x| x.abs() < 1e-14), "d={dim} j={j}");
            }
        }
    }
}

#[test]
fn multipliers_vanish_for_admissible_data() {
    for (problem, dim, n) in [(Problem::QuadCurl, 3, 2), (Problem::FourthDiv, 3, 2), (Problem::FourthDiv, 2, 4), (Problem::Biharmonic, 2, 4)] {
        let case = make_case(problem, dim).unwrap();
        let spaces = DecoupledSpaces::new(&box_mesh(dim, n).unwrap(), 1, case.j).unwrap();
        let sol = case.solve(&spaces, &SolverConfig::default()).unwrap();
        assert!(sol.multiplier_ratio() < 1e-6, "{problem:?} d={dim}: {}", sol.multiplier_ratio());
    }
}

#[test]
fn infsup_constant_is_stable_in_two_dimensions() {
    let betas: Vec<f64> = [2, 4, 8].iter().map(|&n| infsup_probe(&box_mesh(2, n).unwrap(), 1, 0).unwrap().unwrap()).collect();
    assert!(betas.iter().all(|b| *b > 0.05), "{betas:?}");
    assert!(betas[2] >= 0.5 * betas[0], "{betas:?}");
}

#[test]
fn infsup_constant_is_translation_invariant() {
    let mesh = box_mesh(2, 2).unwrap();
    let shifted: Vec<Vec<f64>> = mesh.vertices.iter().map(|x| vec![x[0] + 3.5, x[1] - 1.25]).collect();
    let moved = Arc::new(SimplicialMesh::from_cells(2, shifted, mesh.cells.clone()).unwrap());
    let a = infsup_probe(&mesh, 1, 0).unwrap().unwrap();
    let b = infsup_probe(&moved, 1, 0).unwrap().unwrap();
    assert!((a - b).abs() < 1e-10 * a, "{a} vs {b}");
}

#[test]
fn infsup_probe_rejects_oversized_problems() {
    assert!(infsup_probe(&box_mesh(3, 8).unwrap(), 1, 1).is_err());
}
