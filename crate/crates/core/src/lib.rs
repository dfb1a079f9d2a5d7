//! Numerical potential theory for finite unions of planar compact sets:
//! Green's functions with pole at infinity, asymptotic convergence factors,
//! complex minimax approximation, and verdicts on weighted universality of
//! Taylor partial sums.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cli;
pub mod construct;
pub mod geometry;
pub mod linalg;
pub mod minimax;
pub mod potential;
pub mod scenario;
