//! Simulation kernel for second-order parabolic SPDEs on the torus, driven by
//! Gaussian noise that is white in time and spatially homogeneous.
//!
//! The pieces, bottom up:
//!
//! * [`covariance`]: the admissible spatial covariance families (white,
//!   Riesz, Bessel, fractional) with their spectral densities, admissibility
//!   deciders, and lattice mode weights.
//! * [`noise`]: spectral synthesis of noise increments on the lattice plus
//!   the statistical validators (covariance, Gaussianity, Ito isometry).
//! * [`greens`]: discrete propagators for the parabolic operator, spectral
//!   for constant coefficients and Crank-Nicolson for variable ones.
//! * [`solver`]: the exponential Euler scheme for the mild equation and the
//!   matching Picard iteration on frozen noise.
//! * [`factorization`]: the fractional time-splitting of the stochastic
//!   convolution and its reconstruction identity.
//! * [`regularity`]: increment-moment estimation of Holder exponents in time
//!   and space.
//! * [`reference`]: closed-form lattice laws used as test oracles.
//! * [`campaign`]: seeded, order-independent parallel path running.

pub mod campaign;
pub mod covariance;
pub mod error;
pub mod factorization;
pub mod fftutil;
pub mod greens;
pub mod grid;
pub mod io;
pub mod noise;
pub mod quad;
pub mod reference;
pub mod regularity;
pub mod solver;
pub mod stats;

pub use covariance::{decide_condition, CovarianceModel, ConditionVerdict};
pub use error::{Error, Result};
pub use grid::{SpatialGrid, TimeGrid};
