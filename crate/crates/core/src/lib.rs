//! qexodus: a computational laboratory for Markov processes conditioned
//! never to hit a moving absorbing boundary.
//!
//! The crate covers, for finite-state chains with time-dependent absorbing
//! schedules: conditioned semigroups and bridges ([`chain`]), explicit
//! minorization/Harnack certificates ([`certify`]), the conditioned
//! Doob-transform process and its mixing coefficients ([`qprocess`]),
//! quasi-stationary, quasi-limiting and quasi-ergodic limits ([`limits`]),
//! and numerical verification of the convergence bounds ([`bounds`]).
//! For one-dimensional diffusions killed at a moving boundary it provides
//! Monte Carlo estimators with closed-form Brownian baselines
//! ([`diffusion`]). [`suite`] generates seeded random models and [`cli`]
//! is the config-driven runner behind the `qexodus` binary.

pub mod bounds;
pub mod certify;
pub mod chain;
pub mod cli;
pub mod diffusion;
pub mod error;
pub mod limits;
pub mod qprocess;
pub mod suite;

pub use error::{Error, Result};
