//! Simulation of a mixed crowd of active and passive pedestrians evacuating a
//! multiply-connected walking area, modelled as a coupled system of reflected
//! (Skorohod-type) stochastic differential equations.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: the polygonal walking region, membership, nearest-point
//!   projection and inward normal cones.
//! - [`skorohod`]: the deterministic Skorohod map (exact one-dimensional map and
//!   the polygonal reflection of piecewise-linear driving paths).
//! - [`navfield`]: the regularized Eikonal navigation field guiding active
//!   pedestrians to the exits.
//! - [`model`]: drift and diffusion coefficients of the crowd model.
//! - [`nondim`]: reference scales, dimensionless groups and the rate `kappa`.
//! - [`integrator`]: the dyadic frozen-coefficient Euler–Skorohod scheme,
//!   ensembles and the verification experiments.
//! - [`scenario`] and [`harness`]: JSON scenario documents and the CLI pipeline.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod integrator;
pub mod model;
pub mod navfield;
pub mod nondim;
pub mod scenario;
pub mod skorohod;
pub mod stats;

pub use error::{Error, Result};
pub use geometry::{Domain, NormalCone, Polygon, Vec2};

/// Library version echoed into run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
