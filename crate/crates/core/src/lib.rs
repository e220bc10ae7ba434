//! Simulation and verification toolkit for subcritical inhomogeneous random
//! graphs of preferential attachment type.
//!
//! The graph on vertices `1..=n` joins `i < j` independently with probability
//! `beta * i^-gamma * j^(gamma-1)` (capped at one). Its local neighbourhoods
//! are approximated by branching random walks with displacement intensity
//! `beta * (e^{gamma x} 1{x>0} + e^{(1-gamma) x} 1{x<0}) dx`, killed outside a
//! window. The crate provides
//!
//! * [`params`]: parameter validation and the analytic constants (`rho_-`,
//!   `rho_+`, `t*`, ...),
//! * [`graph`]: graph sampling, components and degree statistics,
//! * [`brw`]: killed and truncated branching random walks, the frozen/branching
//!   decomposition and the associated general branching process,
//! * [`exploration`]: vertex/position projections, the branching random walk
//!   exploration, decoupling, the Galton-Watson embedding and the coupling
//!   inequalities,
//! * [`estimation`]: exponent regression, Hill estimation, deterministic
//!   replica execution and Galton-Watson extinction probabilities,
//! * [`experiments`]: the named batch experiments driven by the CLI.

// `!(x > 0.0)` guards reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brw;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod exploration;
pub mod graph;
pub mod output;
pub mod params;
pub mod rng;

pub use error::{Error, Result};
pub use params::{validate_params, DerivedConstants, ModelParams, Psi, Regime};
