//! Space-time isogeometric B-spline solver for advection, advection-diffusion
//! and heat equations, with a family of upwind stabilizations (SUPG, shock
//! capturing, high-order spline upwind) and an experiment runner.

// `!(a < b)` rejects NaN along with the out-of-range values; keep it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Stencil and band-storage loops index several arrays with one counter.
#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod cli;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod metrics;
pub mod problems;
pub mod quadrature;
pub mod solver;
pub mod sparse;
pub mod splines;
pub mod stabilization;

pub use error::{Error, Result};
pub use geometry::GeometryMap;
pub use splines::{KnotVector, SplineSpace, TensorLayout};
