//! Rotational cooling of a two-surface diatomic rotor by shaped laser pulses.
//!
//! The crate builds a ¹Σ/¹Π symmetric-top model, propagates it under a
//! piecewise-constant complex field envelope, optimizes that envelope with a
//! sequential Krotov sweep over a weighted set of initial states, and
//! evaluates the resulting excitation/decay cycle map. Random-phase
//! wavefunctions stand in for the thermal mixed state during optimization.
//!
//! Units: energies in cm⁻¹, times in picoseconds, temperatures in kelvin.
//! The field samples are energies too (the product `μ·ε` is what enters the
//! Hamiltonian, with the dipole scale `mu0` dimensionless).

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod dissipation;
pub mod error;
pub mod experiment;
pub mod krotov;
pub mod metrics;
pub mod operator;
pub mod propagation;
pub mod report;
pub mod typicality;
pub mod units;
pub mod wigner;

pub use error::{Error, Result};
/// Complex scalar used throughout.
pub type C64 = nalgebra::Complex<f64>;
