//! Numerical laboratory for the regularized planar p-Laplace equation: a
//! matrix inequality and its comparison bounds, pointwise Hessian identities
//! on grid fields, a Dirichlet solver, and energy estimates on balls.

pub mod error;
pub mod estimates;
pub mod exact;
pub mod field;
pub mod grid;
pub mod io;
pub mod pointwise;
pub mod sampling;
pub mod solver;
pub mod suite;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{Grid, NodeKind};
