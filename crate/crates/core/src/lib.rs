//! Numerical laboratory for the one-dimensional NLS
//! `i u_t = H_q u + g(|u|²) u` with `H_q = -∂² - q δ(x)`.

pub mod bound_states;
pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod grid;
pub mod modulation;
pub mod nonlinearity;
pub mod operator;
pub mod tridiag;
pub mod virial;

pub use error::{Error, Result};
