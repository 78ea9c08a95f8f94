//! Rank checks of the discrete complexes with and without boundary conditions.

use decoupled_feec::fespaces::exactness_audit;
use decoupled_feec::mesh::box_mesh;

pub fn run_example() -> decoupled_feec::Result<()> {
    for (dim, n) in [(2, 2), (3, 1)] {
        let mesh = box_mesh(dim, n)?;
        for j in 0..=dim {
            let rep = exactness_audit(&mesh, 1, j)?;
            println!("d={dim} n={n} j={j}: d∘d / δ∘δ defect {:.1e}", rep.composition_defect);
            for c in &rep.checks {
                println!("    {}: kernel {} range {} -> {}", c.label, c.kernel_dim, c.range_rank, if c.ok { "exact" } else { "NOT exact" });
            }
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example()
}
