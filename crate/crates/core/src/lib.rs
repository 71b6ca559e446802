//! Transient incompressible Navier-Stokes solver on uniform quadrilateral
//! meshes of the unit square.
//!
//! Space: inf-sup stable pairs `Q_r` (optionally enriched with two cell
//! bubbles) / discontinuous `P_{r-1}`, stabilized by one-level local
//! projection onto `P_{r-1}(K)`. Time: discontinuous Galerkin dG(k) with the
//! right-sided Gauss-Radau rule, solved slab by slab with Newton's method.
//!
//! The [`verification`] module carries manufactured solutions, error norms
//! and experimental orders of convergence; [`study`] drives complete
//! convergence studies and backs the `lpsdg` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod element;
pub mod error;
pub mod lps;
pub mod mesh;
pub mod quadrature;
pub mod slab;
pub mod sparse;
pub mod spaces;
pub mod study;
pub mod temporal;
pub mod verification;

pub use error::{Error, Result};

/// A point in the physical domain or on the reference square.
pub type Point = [f64; 2];
