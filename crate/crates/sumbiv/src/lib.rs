//! Minimization of sums of bivariate functions over finite domains.
//!
//! The crate covers exact solvers for forests, the local LP relaxation and its
//! dual, block-coordinate ascent and message-passing heuristics, the
//! entropy-regularized dual, least-squares approximation by sums of
//! bivariates, and seeded generators with a benchmark runner.

// Table code indexes rows and columns together; negated float comparisons
// reject NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod approx;
pub mod bench;
pub mod duals;
pub mod exact;
pub mod measures;
pub mod model;
pub mod par;
pub mod solvers;

pub use model::{Assignment, Instance, ModelError, Table};
