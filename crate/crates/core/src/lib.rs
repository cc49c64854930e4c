//! Tangential calculus on analytic surfaces and finite-element
//! discretizations of the stationary surface Stokes problem.
//!
//! The crate is layered bottom-up:
//!
//! ```text
//! geometry  ->  tancalc  ->  mesh  ->  assembly  ->  solver  ->  experiments
//!  (exact        (FD ops,     (icosphere, (P2/P1 forms,  (saddle solve,  (CLI drivers,
//!   level sets)   identities)  torus, quad) constraints)   Korn, inf-sup)  reports)
//! ```

// Negated comparisons reject NaN parameters; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod mesh;
pub mod par;
pub mod solver;
pub mod tancalc;

pub use geometry::{GeometryEval, LevelSetSurface, Mat3, SurfaceKind, Vec3};
