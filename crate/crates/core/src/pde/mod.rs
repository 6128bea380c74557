//! Discrete infrastructure shared by the cell and macro solvers.

pub mod grid;
pub mod krylov;
pub mod q1;
pub mod sparse;
pub mod tensor;

pub use grid::{div, grad, sym_grad, NodeField, PeriodicGrid, ScalarField, VectorField};
pub use krylov::{bicgstab_solve, cg_solve, saddle_solve, CgOptions, LinearOperator, RectOperator, SaddleOptions, SaddleSystem, SolveInfo};
pub use sparse::Csr;
pub use tensor::{devoigt, j_basis, voigt, Mat3, Sym6};
