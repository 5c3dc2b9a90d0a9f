//! Ginzburg–Landau–Devonshire ferroelectric solver.
//!
//! The polarization gradient flow is discretized with a convex-split
//! semi-implicit time scheme and a hybridizable discontinuous Galerkin
//! method on axis-aligned quadrilateral meshes with 1-irregular refinement.

pub mod error;
pub mod hdg;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod polybasis;
pub mod stepper;
pub mod verification;

pub use error::{GldError, Result};
