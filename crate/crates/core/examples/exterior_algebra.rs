//! Wedge products, the Hodge star and the codifferential on constant and polynomial forms.

use decoupled_feec::exterior::{double_star_sign, hodge_star, wedge, AlternatingForm};
use decoupled_feec::mesh::CellGeometry;
use decoupled_feec::polyforms::{codifferential, exterior_derivative, koszul_at_barycenter, PolynomialForm};
use std::sync::Arc;

pub fn run_example() -> decoupled_feec::Result<()> {
    let dx1 = AlternatingForm::basis_wedge(3, &[0]);
    let dx2 = AlternatingForm::basis_wedge(3, &[1]);
    let dx12 = wedge(&dx1, &dx2)?;
    println!("dx1 ∧ dx2 = {:?}", dx12.coeffs());
    println!("⋆(dx1 ∧ dx2) = {:?}", hodge_star(&dx12).coeffs());
    for j in 0..=3 {
        println!("⋆⋆ on {j}-forms in 3D: {:+}", double_star_sign(3, j));
    }

    // forms on the reference tetrahedron, coefficients in barycentric monomials
    let tet = Arc::new(CellGeometry::reference(3));
    let one = PolynomialForm::constant(tet.clone(), &dx12);
    let k = koszul_at_barycenter(&one)?;
    println!("κ(dx1∧dx2) has polynomial degree {}", k.poly_degree());
    let dk = exterior_derivative(&k)?;
    println!("d κ(dx1∧dx2) = {:?} (constant, 3 dx1∧dx2 by the homotopy formula)", dk.eval(&[0.25; 4]).coeffs());
    let dd = exterior_derivative(&dk)?;
    println!("dd = 0: {}", dd.is_zero());
    let delta = codifferential(&k)?;
    println!("δκ(dx1∧dx2) at the barycenter: {:?}", delta.eval(&[0.25; 4]).coeffs());
    Ok(())
}

#[allow(dead_code)]
fn main() -> decoupled_feec::Result<()> {
    run_example()
}
