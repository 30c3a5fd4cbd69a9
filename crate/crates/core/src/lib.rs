//! Conformally covariant Riesz-type integral operators on locally conformally
//! flat manifolds presented as quotients of the sphere by Kleinian groups.
//!
//! The crate is organised bottom-up:
//!
//! * [`mobius`]: Möbius maps, Kleinian groups and Poincaré series.
//! * [`geometry`]: stereographic charts and discretized fundamental domains.
//! * [`riesz`]: flat Riesz potentials, the fractional Laplacian and bubbles.
//! * [`kernel`]: the periodized kernel and its dense assembly.
//! * [`solver`]: the discrete operator, its inverse and the nonlinear solve.
//! * [`analysis`]: moving planes, rescaling, bubble fits and continuation.

pub mod analysis;
pub mod error;
pub mod geometry;
pub mod kernel;
pub mod mobius;
pub(crate) mod quad;
pub mod riesz;
pub mod solver;
pub(crate) mod vec;

pub use error::{Error, Result};
