//! Conforming finite element methods for fourth-order exterior differential equations,
//! decoupled into two second-order mixed problems and one generalized Stokes problem.

pub mod combinatorics;
pub mod error;
pub mod exterior;

pub use error::{FeecError, Result};
pub mod mesh;
pub mod polyforms;
pub mod quadrature;
pub mod linalg;
pub mod fespaces;
pub mod system;
pub mod harness;
