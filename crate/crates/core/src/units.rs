//! Physical constants in the crate's unit system (cm⁻¹, ps, K).

/// Reduced Planck constant in cm⁻¹·ps.
pub const HBAR: f64 = 5.308_837_458_876_147;

/// Boltzmann constant in cm⁻¹/K.
pub const K_B: f64 = 0.695_034_800_486_127_5;
