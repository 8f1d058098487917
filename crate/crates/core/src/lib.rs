//! Frictional contact solvers built around a proximal ADMM for the contact
//! nonlinear complementarity problem, with a projected Gauss-Seidel
//! baseline, a proximal inverse-dynamics solver and a small translational
//! rigid-body simulator used to generate benchmark problems.

// `!(x > 0.0)` is how parameter checks reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod bench;
pub mod cones;
pub mod error;
pub mod inverse;
pub mod linalg;
pub mod pgs;
pub mod problem;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use problem::{check_ncp, Complementarity, ContactProblem, ResidualReport};
pub use solver::{RhoStrategy, SolverResult, SolverSettings, Status, WarmStartPolicy};

/// The linear algebra crate used in the public API.
pub use nalgebra;
