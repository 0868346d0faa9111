//! Linear quantile regression and its coverage in the proportional regime.
//!
//! The crate has three layers:
//!
//! * fitting: pinball-loss ERM by (sub)gradient descent, an exact
//!   vertex-enumeration oracle for tiny problems, and the minimum-norm
//!   interpolator for `d + 1 >= n` ([`erm`]);
//! * theory: the three-equation fixed point in `(tau, lambda, b)` whose root
//!   gives the limiting coverage `alpha - C(alpha, kappa)` ([`theory`]),
//!   built on the Moreau-envelope calculus of the shifted pinball loss
//!   ([`pinball`]) and exact-in-`Z` Gaussian expectations ([`expectation`]);
//! * experiments: reproducible sweeps that compare the two ([`experiments`]).

pub mod coverage;
pub mod erm;
mod error;
pub mod expectation;
pub mod experiments;
pub mod noise;
pub mod pinball;
pub mod quadrature;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use noise::{Component, NoiseModel};
pub use pinball::QuantileLevel;
pub use quadrature::QuadratureSpec;
