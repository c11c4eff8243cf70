//! Mild solutions and existence certificates for semilinear Hilfer
//! fractional evolution equations with non-instantaneous impulses.
// `!(x > 0.0)` is deliberate throughout: it rejects NaN along with the rest.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod checker;
pub mod cli;
pub mod config;
pub mod expr;
pub mod fracops;
pub mod limits;
pub mod operators;
pub mod problem;
pub mod quad;
pub mod solver;
pub mod specfun;
pub mod verifier;
