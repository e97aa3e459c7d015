//! Empirical measures of time-weighted reversible diffusions on compact manifolds.
//!
//! The crate covers closed-form spectral data for flat tori and a weighted
//! circle, the special functions behind the renormalization constants, a
//! seeded time-changed sampler, norm estimators with stationary oracles,
//! transport solvers on the circle and on periodic grids, and an experiment
//! harness that ties them together.

pub mod diffusion;
pub mod error;
pub mod harness;
pub mod norms;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod spectral;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
