//! Stochastic localization confined to the zero fiber of a holomorphic
//! polynomial map, with closed-form and Monte Carlo checks of the resulting
//! Gaussian mixture decomposition and Gaussian waist inequalities.

pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod localization;
pub mod montecarlo;
pub mod rng;
pub mod variety;

pub use error::{Error, Result};
