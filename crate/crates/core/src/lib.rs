//! Optimal control of semilinear parabolic equations with control bounds and
//! pointwise state constraints, discretized by finite differences and
//! implicit Euler.
//!
//! [`optimizer::solve_ocp`] returns a control, state, adjoint and multiplier
//! masses. [`conditions`] checks first-order conditions and samples the
//! critical cone for second-order ones. [`calculus`] evaluates the cost, the
//! Lagrangian and their derivatives. [`convergence`] measures observed orders
//! against a known solution.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod adjoint;
pub mod calculus;
pub mod cli;
pub mod conditions;
pub mod convergence;
pub mod error;
pub mod expr;
pub mod forward;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod optimizer;
pub mod presets;
pub mod problem;
pub mod random;
pub mod sensitivity;

pub use error::{Error, Result};
