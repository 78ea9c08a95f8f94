//! Discrete inf-sup constants of the generalized Stokes stage under refinement.

use decoupled_feec::mesh::box_mesh;
use decoupled_feec::system::infsup_probe;

pub fn run_example() -> decoupled_feec::Result<Vec<f64>> {
    let mut out = Vec::new();
    for (dim, levels) in [(2usize, [2usize, 4, 8]), (3, [1, 2, 4])] {
        for j in 0..=dim - 1 {
            let betas: Vec<Option<f64>> = levels.iter().map(|&n| infsup_probe(&box_mesh(dim, n)?, 1, j)).collect::<decoupled_feec::Result<_>>()?;
            let shown: Vec<String> = betas.iter().map(|b| b.map_or("n/a".to_string(), |b| format!("{b:.4}"))).collect();
            println!("d={dim} j={j} n={levels:?}: β_h = {}", shown.join(", "));
            out.extend(betas.into_iter().flatten());
        }
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example().map(|_| ())
}
