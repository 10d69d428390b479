//! Simulation and analysis of a nonlocal reaction-diffusion-taxis model of
//! acid-mediated tumour invasion in one space dimension.
//!
//! - [`model`]: grids, fields and the coefficient functions mu and g
//! - [`kernels`]: interaction kernels and convolution engines
//! - [`solver`]: finite-volume operators and time integration
//! - [`stability`]: equilibria and dispersion relations
//! - [`analysis`]: Lyapunov functional, convergence and pattern metrics
//! - [`kinetic`]: velocity-jump particle model and its diffusion limit

pub mod analysis;
pub mod error;
pub mod kernels;
pub mod kinetic;
pub mod model;
pub mod solver;
pub mod stability;

pub use error::{Error, Result};
