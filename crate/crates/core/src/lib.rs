//! Dense optical flow for scalar data on an evolving graph surface.
//!
//! The pipeline runs: volumetric preprocessing ([`preprocess`]) → surface
//! geometry ([`geometry`]) → Euler–Lagrange coefficients ([`variational`]) →
//! sparse assembly ([`assembly`]) → restarted GMRES ([`solver`]) → velocity
//! reconstruction and trajectories ([`kinematics`]) → colour-coded output
//! ([`render`]). [`synth`] produces manufactured test sequences with known flow.

// Tensor code indexes by component; `!(x > eps)` is used to reject NaN too.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod evsf;
pub mod fd;
pub mod geometry;
pub mod kinematics;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod render;
pub mod solver;
pub mod sparse;
pub mod synth;
pub mod variational;

pub use error::{Error, Result};
pub use model::{FrameField, Grid3, HeightField, ScalarField3, VectorField3, Volume4};
