//! Collocation boundary elements for the Laplace boundary integral
//! equations: triangle meshes, element quadrature, boundary conditions and
//! the matrix-free systems driven by the FMM engine.

pub mod bc;
pub mod mesh;
pub mod quadrature;
pub mod shapes;
pub mod system;

pub use bc::{BcKind, BoundaryCondition};
pub use mesh::TriMesh;
pub use quadrature::{element_integral, ElementQuadrature};
pub use system::{
    assemble_dirichlet_system, assemble_mixed_system, DirichletSystem, MixedSystem,
};
