//! Finite-difference laboratory for `Δw = e^w − |φ|² e^{−(k−1)w}` on truncated squares,
//! with invariant checks and the geometric developments of its normalized solutions.

pub mod config;
pub mod develop;
pub mod grid;
pub mod holo;
pub mod linalg;
pub mod pipeline;
pub mod solver;
pub mod verify;

pub use config::{RunConfig, Stage};
pub use develop::{DevelopedSurface, GaussMapField, Mode, NormalizedSolution};
pub use grid::{BoundaryData, BoundaryKind, GridDomain, ScalarField, VortexProblem};
pub use holo::EntireFunction;
pub use num_complex::Complex64;
pub use solver::{SolveReport, Tolerances};
pub use verify::InvariantReport;
