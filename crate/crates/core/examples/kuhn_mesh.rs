//! Kuhn triangulations of the unit square and cube, their sub-simplex tables and refinement.

use decoupled_feec::mesh::{box_mesh, refine_uniform};

pub fn run_example() -> decoupled_feec::Result<()> {
    for (dim, n) in [(2, 4), (3, 2), (3, 4)] {
        let mesh = box_mesh(dim, n)?;
        let counts: Vec<String> = (0..=dim).map(|l| mesh.count(l).to_string()).collect();
        println!(
            "d={dim} n={n}: simplex counts by dimension [{}], Euler characteristic {}, {} translation classes, h = {:.4}",
            counts.join(", "),
            mesh.euler_characteristic(),
            mesh.num_classes(),
            mesh.h()
        );
    }
    let coarse = box_mesh(2, 2)?;
    let fine = refine_uniform(&coarse)?;
    println!("refining n=2 gives {} triangles", fine.num_cells());
    let mut dump = Vec::new();
    box_mesh(2, 1)?.write_dump(&mut dump)?;
    print!("{}", String::from_utf8_lossy(&dump));
    Ok(())
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example()
}
