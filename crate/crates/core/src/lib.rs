//! Geodesic paths and distances on implicit surfaces.
//!
//! A surface is the zero level set of a scalar field ([`levelset::LevelSet`]).
//! A discrete path between two surface points ([`curve::DiscreteCurve`]) is
//! relaxed together with a pointwise Lagrange multiplier by a family of
//! regularized primal-dual iterations ([`schemes`]). [`diagnostics`] measures
//! how close an iterate is to a geodesic, [`planar`] treats the flat case with
//! an implicit curve update and an ergodic-gap certificate, and [`harness`]
//! drives experiments from the `lsgeo` command line tool.

pub mod curve;
pub mod diagnostics;
pub mod harness;
mod kdtree;
pub mod levelset;
pub mod planar;
pub mod schemes;

/// Points and vectors in ℝ³.
pub type Vec3 = nalgebra::Vector3<f64>;

pub use curve::{DiscreteCurve, MultiplierField};
pub use diagnostics::{IterationTrace, TraceRow};
pub use levelset::{LevelSet, LevelSetKind};
pub use schemes::{Scheme, SolverConfig, SolverState};
