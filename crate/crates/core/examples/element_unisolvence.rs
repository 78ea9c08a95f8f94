//! Builds every element family on the reference triangle and tetrahedron and reports the
//! conditioning of its degree-of-freedom matrix.

use std::sync::Arc;

use decoupled_feec::mesh::CellGeometry;
use decoupled_feec::polyforms::{build_element, check_unisolvence, ShapeKind};

pub fn run_example() -> decoupled_feec::Result<()> {
    for dim in [2, 3] {
        let geom = Arc::new(CellGeometry::reference(dim));
        for kind in [ShapeKind::Full, ShapeKind::Trimmed, ShapeKind::StarTrimmed, ShapeKind::Phi] {
            for k in 1..=2 {
                let top = if kind == ShapeKind::Phi { dim - 1 } else { dim };
                for j in 0..=top {
                    let e = build_element(kind, k, j, geom.clone())?;
                    let rep = check_unisolvence(&e);
                    println!("d={dim} {kind:?} k={k} j={j}: {} functions, condition {:.2e}, {}", rep.num_dofs, rep.condition, rep.message);
                    if !rep.ok {
                        return Err(decoupled_feec::FeecError::NotUnisolvent(rep.message));
                    }
                }
            }
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example()
}
