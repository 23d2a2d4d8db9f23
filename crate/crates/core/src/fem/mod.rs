//! Piecewise-linear finite elements on triangles.

pub mod io;
pub mod mesh;
pub mod space;
pub mod sparse;

pub use io::{read_mesh, write_atomic, write_mesh, Field};
pub use mesh::{build_unit_disc_mesh, build_unit_square_mesh, BoundaryFacet, Mesh, BOUNDARY_MARKER};
pub use space::{
    assemble_boundary_mass, assemble_mass, assemble_stiffness, Coefficient, FunctionSpace, NormKind,
};
pub use sparse::{solve_sparse, Factorization, SparseOperator, SparsityPattern};
