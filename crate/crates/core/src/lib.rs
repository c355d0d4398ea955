//! Unfitted isoparametric finite elements for unique continuation across a
//! material interface.
//!
//! The pipeline runs mesh → cut geometry → deformation → spaces → assembly →
//! solve → error evaluation. [`runner`] wires the stages together for
//! convergence studies and parameter sweeps.

pub mod assembly;
pub mod cutgeom;
pub mod error;
pub mod fespace;
pub mod isomap;
pub mod mesh;
pub mod problems;
pub mod quadrature;
pub mod runner;
pub mod solver;
pub mod sparse;

pub use error::{Error, Result};

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Mat2 = nalgebra::Matrix2<f64>;
