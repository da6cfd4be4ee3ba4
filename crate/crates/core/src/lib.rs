//! Remeshing of triangle surfaces into planar hexagonal or planar quad
//! panel meshes.
//!
//! The pipeline attaches a pair of tangent vectors (U, V) to every face of
//! the input mesh, optimizes them so that their complex N-th powers agree
//! across edges (N = 6 for hex layouts, N = 4 for quads), integrates the
//! resulting coordinate functions into a seamless parameterization, traces
//! integer isolines into a triangular (or quad) grid, dualizes to hexagons,
//! and finally planarizes the panels.
//!
//! Stages, in pipeline order:
//!
//! 1. [`mesh`]: load/validate the input surface, adjacency, per-face frames.
//! 2. [`curvature`]: shape operator, polar curvature, region labels, and the
//!    regularized Dupin metric that drives element sizing.
//! 3. [`guiding`]: a degree-2 direction field interpolating curvature
//!    directions, used to seed and align the power fields.
//! 4. [`cpf`]: the coordinate power field optimization itself.
//! 5. [`integrate`]: edge matchings, cutting to a disk, Poisson integration
//!    with integer seam jumps.
//! 6. [`extract`]: isoline tracing and the barycentric dual.
//! 7. [`planarize`]: panel planarization under proximity/fairness terms.
//! 8. [`metrics`]: planarity and distance quality measures.
//! 9. [`pipeline`]: configuration, stage orchestration, artifacts, resume.
//!
//! [`nlls`] is the shared sparse Levenberg-Marquardt solver; [`geom`] holds
//! the small 2D kernels (rotations, complex powers, symmetric eigen pairs)
//! everything else leans on.
//!
//! # Conventions
//!
//! - Per-face local bases are 3x2 column-orthonormal matrices `B`; the face
//!   normal is `B.col(0) x B.col(1)`. 2D quantities live in these bases.
//! - The 2D rotation by +90 degrees is `J = [[0,-1],[1,0]]`; `J(x,y) = (-y,x)`.
//! - 2D vectors are identified with complex numbers `(x, y) = x + iy` when
//!   raised to integer powers.
//! - The orientation scalar of a field pair is `s = <U, -J V> = det [U V]`;
//!   fields with `s > 0` are counterclockwise-ordered and invertible.

pub mod cpf;
pub mod curvature;
pub mod extract;
pub mod geom;
pub mod guiding;
pub mod integrate;
pub mod mesh;
pub mod metrics;
pub mod nlls;
pub mod pipeline;
pub mod planarize;

pub use pipeline::{run_pipeline, PipelineConfig, PipelineError};
