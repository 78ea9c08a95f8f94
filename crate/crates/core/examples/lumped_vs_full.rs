//! Compares the method with diagonal multiplier inner products (multipliers eliminated) and
//! the one with full mass matrices.

use decoupled_feec::harness::{make_case, Problem};
use decoupled_feec::linalg::norm2;
use decoupled_feec::mesh::box_mesh;
use decoupled_feec::system::{DecoupledSpaces, SolverConfig};

pub fn run_example() -> decoupled_feec::Result<f64> {
    let case = make_case(Problem::Biharmonic, 3)?;
    let spaces = DecoupledSpaces::new(&box_mesh(3, 2)?, 1, 0)?;
    let lumped = case.solve(&spaces, &SolverConfig::default())?;
    let full = case.solve(&spaces, &SolverConfig { eliminate: false, ..SolverConfig::default() })?;
    let rel = |a: &[f64], b: &[f64]| {
        let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        norm2(&diff) / norm2(b).max(f64::MIN_POSITIVE)
    };
    // p vanishes up to round-off, so it is compared together with φ as the Stokes-stage primal
    let stokes = |s: &decoupled_feec::system::DecoupledSolution| [s.phi.as_slice(), s.p.as_slice()].concat();
    let mut worst: f64 = 0.0;
    for (name, a, b) in [("w", lumped.w.clone(), full.w.clone()), ("(φ, p)", stokes(&lumped), stokes(&full)), ("u", lumped.u.clone(), full.u.clone())] {
        let r = rel(&a, &b);
        println!("{name}: relative difference {r:.2e}");
        worst = worst.max(r);
    }
    println!("multipliers: lumped {:.2e}, full {:.2e}", lumped.multiplier_ratio(), full.multiplier_ratio());
    Ok(worst)
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example().map(|_| ())
}
