//! Coupled voltage/temperature tetrahedral FEM simulator with pluggable
//! sparse solvers, per-step PSNR validation and region tracing.

// `!(x > 0.0)` also rejects NaN; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod fem;
pub mod mesh;
pub mod metrics;
pub mod results;
pub mod solver;
pub mod sparse;
pub mod trace;
