//! Partially hyperbolic dynamics on the torus: invariant splittings, Lyapunov
//! exponents, unstable leaves, periodic pseudo-orbits closed by Newton, and
//! the periodic-approximation scheme that drives nonhyperbolic ergodic
//! measures out of them.

pub mod bundles;
pub mod error;
pub mod exponents;
pub mod gibbs;
pub mod gikn;
pub mod leaf;
pub mod linalg;
pub mod measures;
pub mod newton;
pub mod orbits;
pub mod real;
mod spatial;
pub mod systems;
pub mod torus;

pub use error::{DynError, Result};
pub use real::Real;
pub use torus::{canonical_lift, torus_distance, wrap_displacement};

/// Default-precision point of the 3-torus.
pub type Point3 = torus::TorusPoint<f64, 3>;
/// Default-precision point of the 2-torus.
pub type Point2 = torus::TorusPoint<f64, 2>;
