//! Stationary mean field equilibrium of wage dispersion with a diffusive
//! match surplus.
//!
//! The worker problem is an obstacle HJB on a surplus grid
//! ([`hjb`]), the cross-section solves a conservative stationary forward
//! equation ([`kolmogorov`]), and [`equilibrium`] closes the loop between
//! the two. [`benchmark`] and [`montecarlo`] are independent checks.

pub mod benchmark;
pub mod config;
pub mod equilibrium;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod kolmogorov;
pub mod linalg;
pub mod montecarlo;
pub mod params;

pub use config::{Config, Numerics};
pub use equilibrium::{solve_equilibrium, CounterfactualMode, EquilibriumResult, InitialDensity};
pub use error::{Error, Result};
pub use params::ModelParams;
