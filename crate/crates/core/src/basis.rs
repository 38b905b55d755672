//! Two-surface symmetric-top basis, field-free Hamiltonian, dipole couplings
//! and thermal ground-state populations.
//!
//! The canonical ordering produced by [`RotorBasis::new`] (surface, then `J`,
//! then `Ω`, then `M`, all ascending, ground surface first) indexes every
//! vector and matrix in the crate.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::operator::{OperatorKind, OperatorMatrix};
use crate::units::K_B;
use crate::wigner::wigner3j;
use crate::{Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Surface {
    /// ¹Σ, Ω = 0.
    Ground,
    /// ¹Π, Ω = ±1.
    Excited,
}

/// One symmetric-top level |surface, J, Ω, M⟩.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState {
    pub surface: Surface,
    pub j: i32,
    pub omega: i32,
    pub m: i32,
}

impl BasisState {
    pub fn ground(j: i32, m: i32) -> Self {
        Self { surface: Surface::Ground, j, omega: 0, m }
    }

    pub fn excited(j: i32, omega: i32, m: i32) -> Self {
        Self { surface: Surface::Excited, j, omega, m }
    }

    pub fn is_valid(&self) -> bool {
        let surface_ok = match self.surface {
            Surface::Ground => self.omega == 0,
            Surface::Excited => (self.omega == 1 || self.omega == -1) && self.j >= 1,
        };
        surface_ok && self.j >= 0 && self.m.abs() <= self.j
    }

    pub fn is_ground(&self) -> bool {
        self.surface == Surface::Ground
    }

    /// Short label, `g:J.M` for ground levels and `e:J.Ω.M` for excited ones.
    pub fn label(&self) -> String {
        match self.surface {
            Surface::Ground => format!("g:{}.{}", self.j, self.m),
            Surface::Excited => format!("e:{}.{}.{}", self.j, self.omega, self.m),
        }
    }
}

impl fmt::Display for BasisState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Sign convention for the reduced dipole matrix elements.
///
/// The two choices differ by the gauge transformation `P_g - P_e`, i.e. a
/// global sign of every coupling, so populations and fitness values do not
/// depend on it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseConvention {
    /// Condon–Shortley phase `(-1)^(M-Ω)` of the excited level.
    #[default]
    CondonShortley,
    /// Phase `(-1)^(M-Ω)` taken on the ground level instead.
    GroundReferenced,
}

/// Molecular constants and basis truncation.
///
/// The defaults are AlF-like (X¹Σ⁺ and A¹Π rotational constants near
/// 0.55 cm⁻¹); they are implementer choices, not fitted spectroscopy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MolecularParams {
    /// Ground rotational constant, cm⁻¹.
    pub b_g: f64,
    /// Excited rotational constant, cm⁻¹.
    pub b_e: f64,
    /// Dimensionless transition-dipole scale.
    pub mu0: f64,
    /// Spontaneous-emission scale, s⁻¹.
    pub gamma0: f64,
    pub j_max_g: i32,
    pub j_max_e: i32,
    /// Initial temperature, K.
    pub temperature: f64,
    pub phase: PhaseConvention,
}

impl Default for MolecularParams {
    fn default() -> Self {
        Self {
            b_g: 0.5525,
            b_e: 0.5570,
            mu0: 1.0,
            gamma0: 1.0e6,
            j_max_g: 11,
            j_max_e: 11,
            temperature: 30.0,
            phase: PhaseConvention::CondonShortley,
        }
    }
}

impl MolecularParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("b_g", self.b_g), ("b_e", self.b_e), ("mu0", self.mu0), ("gamma0", self.gamma0)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.j_max_g < 0 {
            return Err(Error::InvalidParams(format!("j_max_g must be >= 0, got {}", self.j_max_g)));
        }
        if self.j_max_e < 1 {
            return Err(Error::InvalidParams(format!("j_max_e must be >= 1, got {}", self.j_max_e)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::NonphysicalTemperature(self.temperature));
        }
        Ok(())
    }

    /// Same molecule with both truncations set to `j_max`.
    pub fn with_j_max(&self, j_max: i32) -> Self {
        Self { j_max_g: j_max, j_max_e: j_max, ..self.clone() }
    }
}

/// Canonically ordered basis: all ground levels, then all excited levels.
#[derive(Clone, Debug)]
pub struct RotorBasis {
    states: Vec<BasisState>,
    n_ground: usize,
    index: HashMap<BasisState, usize>,
}

impl RotorBasis {
    pub fn new(params: &MolecularParams) -> Result<Self> {
        params.validate()?;
        let states = enumerate_basis(params);
        let n_ground = states.iter().filter(|s| s.is_ground()).count();
        let index = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
        Ok(Self { states, n_ground, index })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_ground(&self) -> usize {
        self.n_ground
    }

    pub fn n_excited(&self) -> usize {
        self.states.len() - self.n_ground
    }

    pub fn states(&self) -> &[BasisState] {
        &self.states
    }

    pub fn state(&self, i: usize) -> BasisState {
        self.states[i]
    }

    pub fn ground_states(&self) -> &[BasisState] {
        &self.states[..self.n_ground]
    }

    pub fn excited_states(&self) -> &[BasisState] {
        &self.states[self.n_ground..]
    }

    pub fn index_of(&self, s: &BasisState) -> Option<usize> {
        self.index.get(s).copied()
    }
}

/// All valid levels up to the truncations, in canonical order.
pub fn enumerate_basis(params: &MolecularParams) -> Vec<BasisState> {
    let mut out = Vec::new();
    for j in 0..=params.j_max_g {
        for m in -j..=j {
            out.push(BasisState::ground(j, m));
        }
    }
    for j in 1..=params.j_max_e {
        for omega in [-1, 1] {
            for m in -j..=j {
                out.push(BasisState::excited(j, omega, m));
            }
        }
    }
    out
}

/// Basis size for the canonical truncations.
pub fn basis_count(j_max_g: i32, j_max_e: i32) -> usize {
    ((j_max_g + 1) * (j_max_g + 1) + 2 * ((j_max_e + 1) * (j_max_e + 1) - 1)) as usize
}

/// Rotational energy in the rotating frame (electronic gap removed).
pub fn rotational_energy(state: &BasisState, params: &MolecularParams) -> f64 {
    let jj = (state.j * (state.j + 1)) as f64;
    match state.surface {
        Surface::Ground => params.b_g * jj,
        Surface::Excited => params.b_e * (jj - 1.0),
    }
}

/// Diagonal field-free Hamiltonian over the canonical basis.
pub fn build_h0(basis: &RotorBasis, params: &MolecularParams) -> OperatorMatrix {
    let diag: Vec<f64> = basis.states().iter().map(|s| rotational_energy(s, params)).collect();
    OperatorMatrix::hermitian_from_real_diagonal(&diag)
}

fn parity(n: i32) -> f64 {
    if n.rem_euclid(2) == 0 { 1.0 } else { -1.0 }
}

/// Spherical component `p` of the dimensionless transition dipole between a
/// ground and an excited level:
///
/// ```text
/// (-1)^(M_e-Ω_e) sqrt((2J_g+1)(2J_e+1)) (J_e 1 J_g; -M_e p M_g) (J_e 1 J_g; -Ω_e q Ω_g),  q = Ω_e - Ω_g
/// ```
///
/// Zero when either argument is on the wrong surface.
pub fn dipole_component(ground: &BasisState, excited: &BasisState, p: i32, phase: PhaseConvention) -> f64 {
    if !ground.is_ground() || excited.is_ground() {
        return 0.0;
    }
    let q = excited.omega - ground.omega;
    let lab = wigner3j(excited.j, 1, ground.j, -excited.m, p, ground.m);
    if lab == 0.0 {
        return 0.0;
    }
    let body = wigner3j(excited.j, 1, ground.j, -excited.omega, q, ground.omega);
    let sign = match phase {
        PhaseConvention::CondonShortley => parity(excited.m - excited.omega),
        PhaseConvention::GroundReferenced => parity(ground.m - ground.omega),
    };
    let norm = (((2 * ground.j + 1) * (2 * excited.j + 1)) as f64).sqrt();
    sign * norm * lab * body
}

/// z-polarized (lab index 0) dipole element, symmetric in its arguments.
pub fn dipole_element(from: &BasisState, to: &BasisState, phase: PhaseConvention) -> f64 {
    match (from.surface, to.surface) {
        (Surface::Ground, Surface::Excited) => dipole_component(from, to, 0, phase),
        (Surface::Excited, Surface::Ground) => dipole_component(to, from, 0, phase),
        _ => 0.0,
    }
}

/// Full z-dipole operator `mu0 · μ_z ⊗ (S₊ + S₋)`.
pub fn build_dipole_matrix(basis: &RotorBasis, params: &MolecularParams) -> OperatorMatrix {
    let n = basis.len();
    let ng = basis.n_ground();
    let mut m = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for g in 0..ng {
        for e in ng..n {
            let v = params.mu0 * dipole_element(&basis.state(g), &basis.state(e), params.phase);
            if v != 0.0 {
                m[(g, e)] = C64::new(v, 0.0);
                m[(e, g)] = C64::new(v, 0.0);
            }
        }
    }
    OperatorMatrix::new(m, OperatorKind::Hermitian).expect("real symmetric by construction")
}

/// Boltzmann populations `e^{-βB J(J+1)}/Z` over the ground levels `J <= j_max`.
pub fn thermal_distribution(b_g: f64, j_max: i32, temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::NonphysicalTemperature(temperature));
    }
    let beta = 1.0 / (K_B * temperature);
    let mut p = Vec::with_capacity(((j_max + 1) * (j_max + 1)) as usize);
    for j in 0..=j_max {
        let w = (-beta * b_g * (j * (j + 1)) as f64).exp();
        p.extend(std::iter::repeat_n(w, (2 * j + 1) as usize));
    }
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= z);
    Ok(p)
}

/// Thermal populations over the ground manifold of `params`, canonical order.
pub fn thermal_populations(params: &MolecularParams) -> Result<Vec<f64>> {
    thermal_distribution(params.b_g, params.j_max_g, params.temperature)
}
