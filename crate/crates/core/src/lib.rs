//! Quermassintegral-preserving curvature flows of h-convex hypersurfaces in
//! hyperbolic space, together with the quermassintegral machinery needed to
//! check Alexandrov–Fenchel type inequalities numerically.
//!
//! * [`symfunc`]: elementary symmetric functions, Garding cones, the flow speed;
//! * [`starbody`]: radial-graph bodies, spectral geometry, generators;
//! * [`integrals`]: curvature integrals, quermassintegrals, integral identities;
//! * [`ballfuncs`]: quermassintegrals of geodesic balls and their compositions;
//! * [`flow`]: time integration with conservation and convergence monitors;
//! * [`verify`]: inequality checks over generated corpora.

pub mod ballfuncs;
pub mod error;
pub mod flow;
pub mod integrals;
pub mod scalar;
pub mod special;
pub mod starbody;
pub mod symfunc;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use starbody::{make_ball, make_offcenter_ball, make_perturbed_ball, GeometryFrame, Mode, StarBody};

/// Principal-curvature tuple in double precision.
pub type CurvatureVector = symfunc::CurvatureVector<f64>;
/// Principal-curvature tuple in single precision.
pub type CurvatureVectorF32 = symfunc::CurvatureVector<f32>;
