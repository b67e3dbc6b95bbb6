//! Numerical laboratory for population games played under dynamic payoff
//! mechanisms.
//!
//! A payoff dynamics model (PDM) maps the population state to payoffs, an
//! evolutionary dynamics model (EDM) maps payoffs back to a population
//! velocity, and their feedback interconnection is the mean closed loop.
//! The crate simulates that loop, computes Nash and perturbed equilibria,
//! evaluates passivity certificates and runs the finite-population jump
//! process that the mean closed loop approximates.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closedloop;
pub mod edm;
pub mod equilibria;
pub mod error;
pub mod games;
pub mod passivity;
pub mod pdm;
pub mod simplex;
pub mod stochastic;

pub use error::{Error, Result};
pub use simplex::{PayoffVector, SimplexState, TangentVector};
