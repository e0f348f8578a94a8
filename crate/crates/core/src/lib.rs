//! Subspace clustering of subspaces (SCoS).
//!
//! Given `K` tall matrices, jointly estimate an assignment of each matrix to one
//! of `R` clusters and a basis for the column subspace shared by each cluster.
//! The estimate is a constrained symmetric block-term decomposition of the
//! third-order tensor whose frontal slabs are the views' orthogonal projectors.
//! The tensor is never formed: every quantity the solver needs is expressed
//! through products of the views' orthonormal bases.
//!
//! Module map:
//!
//! - [`subspace`]: basis extraction, principal angles, chordal distances.
//! - [`synth`]: synthetic scenarios with controlled SINR / INR.
//! - [`solver`]: the alternating penalty / augmented-Lagrangian solver.
//! - [`select`]: number-of-clusters sweep and per-cluster dimension estimation.
//! - [`ident`]: identifiability checks for a labeled scenario.
//! - [`eval`]: clustering metrics and the Monte Carlo benchmark harness.
//! - [`hsi`]: hyperspectral pixel clustering pipeline.
//! - [`io`]: on-disk matrix, scenario and CSV formats.

pub mod error;
pub mod eval;
pub mod hsi;
pub mod ident;
pub mod io;
pub(crate) mod linalg;
pub mod select;
pub mod solver;
pub mod subspace;
pub mod synth;

pub use error::{Result, ScosError};
pub use subspace::{Basis, SubspaceBasis, ViewBasis};
