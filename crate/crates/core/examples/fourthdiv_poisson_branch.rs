//! Fourth-order div problem: the Stokes stage has no pressure and becomes a Poisson problem
//! for `φ = div u` with zero mean.

use decoupled_feec::harness::{make_case, run_case, Problem};
use decoupled_feec::mesh::box_mesh;
use decoupled_feec::system::{DecoupledSpaces, SolverConfig};

pub fn run_example() -> decoupled_feec::Result<()> {
    for dim in [2, 3] {
        let case = make_case(Problem::FourthDiv, dim)?;
        let spaces = DecoupledSpaces::new(&box_mesh(dim, 2)?, 1, dim - 1)?;
        println!("d={dim}: |p-space| = {}, |r-space| = {}, |Φ_h| = {}", spaces.p.num_dofs, spaces.r.num_dofs, spaces.phi.num_dofs);
        let levels: &[usize] = if dim == 2 { &[4, 8, 16] } else { &[2, 4] };
        let report = run_case(&case, 1, levels, &SolverConfig::default())?;
        println!("{}", report.to_markdown());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example()
}
