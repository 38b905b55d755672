//! Random-phase states over the ground manifold and full-space validation.
//!
//! A member has amplitude `√w_j e^{iθ_j}` on ground level `j`, with `θ_j`
//! i.i.d. uniform on `[0, 2π)`. Uniform weights give the `1/√N` form; thermal
//! weights make each member a purification-style sample of the thermal state.
//!
//! Member `k` of an ensemble draws from `ChaCha20Rng::seed_from_u64(seed)`
//! with stream `k`, so ensembles are reproducible across platforms and
//! members are independent of `L`.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{thermal_populations, MolecularParams};
use crate::krotov::TargetOperator;
use crate::propagation::{propagate_final, ControlField, ControlledHamiltonian, StateVector};
use crate::report::{emit_csv, Cell};
use crate::{Error, Result, C64};

/// How ground-level weights are chosen for random-phase members.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Uniform,
    #[default]
    Thermal,
}

/// Ground-manifold weights for `mode`.
pub fn ground_weights(mode: WeightMode, params: &MolecularParams) -> Result<Vec<f64>> {
    match mode {
        WeightMode::Thermal => thermal_populations(params),
        WeightMode::Uniform => {
            let n = ((params.j_max_g + 1) * (params.j_max_g + 1)) as usize;
            Ok(vec![1.0 / n as f64; n])
        }
    }
}

fn normalized_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!("weight {w} is not a finite non-negative number")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidWeights("all weights are zero".into()));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// One random-phase state on a space of dimension `dim`, supported on the
/// first `weights.len()` levels. Returns the state and its phase vector.
pub fn sample_rp_state(weights: &[f64], dim: usize, rng: &mut impl Rng) -> Result<(StateVector, Vec<f64>)> {
    let w = normalized_weights(weights)?;
    if w.len() > dim {
        return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
    }
    let theta: Vec<f64> = (0..w.len()).map(|_| rng.random::<f64>() * TAU).collect();
    let mut amps = DVector::from_element(dim, C64::new(0.0, 0.0));
    for (j, (&wj, &th)) in w.iter().zip(&theta).enumerate() {
        amps[j] = C64::from_polar(wj.sqrt(), th);
    }
    Ok((StateVector::new(amps, 1.0), theta))
}

/// `L` random-phase states with member weights `1/L`.
#[derive(Clone, Debug)]
pub struct RpEnsemble {
    pub members: Vec<StateVector>,
    pub seed: u64,
    pub phase_vectors: Vec<Vec<f64>>,
    /// Normalized ground-level weights the members were drawn with.
    pub weights: Vec<f64>,
    pub mode: Option<WeightMode>,
}

impl RpEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// CSV `member,basis_index,re,im` for the supported levels, plus a JSON
    /// sidecar `<path>.json` with seed, L and weight mode.
    pub fn write(&self, path: &Path) -> Result<()> {
        let n = self.weights.len();
        let rows: Vec<Vec<Cell>> = self
            .members
            .iter()
            .enumerate()
            .flat_map(|(k, m)| {
                (0..n).map(move |j| vec![Cell::from(k), Cell::from(j), m.amplitudes[j].re.into(), m.amplitudes[j].im.into()])
            })
            .collect();
        emit_csv(path, &["member", "basis_index", "re", "im"], &rows)?;
        let sidecar = EnsembleSidecar { seed: self.seed, l: self.len(), weight_mode: self.mode, dim: self.members[0].dim() };
        let json_path = path.with_extension("json");
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }
}

#[derive(Serialize, Deserialize, Debug, PartialEq)]
struct EnsembleSidecar {
    seed: u64,
    #[serde(rename = "L")]
    l: usize,
    weight_mode: Option<WeightMode>,
    dim: usize,
}

/// RNG for ensemble member `k`.
pub fn member_rng(seed: u64, k: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng
}

pub fn build_ensemble(l: usize, weights: &[f64], dim: usize, seed: u64) -> Result<RpEnsemble> {
    if l == 0 {
        return Err(Error::InvalidParams("ensemble size L must be at least 1".into()));
    }
    let normalized = normalized_weights(weights)?;
    let mut members = Vec::with_capacity(l);
    let mut phase_vectors = Vec::with_capacity(l);
    for k in 0..l {
        let (mut s, theta) = sample_rp_state(&normalized, dim, &mut member_rng(seed, k))?;
        s.weight = 1.0 / l as f64;
        members.push(s);
        phase_vectors.push(theta);
    }
    Ok(RpEnsemble { members, seed, phase_vectors, weights: normalized, mode: None })
}

/// [`build_ensemble`] with weights from `mode`, on the full basis of `params`.
pub fn build_ensemble_for(l: usize, mode: WeightMode, params: &MolecularParams, dim: usize, seed: u64) -> Result<RpEnsemble> {
    let mut e = build_ensemble(l, &ground_weights(mode, params)?, dim, seed)?;
    e.mode = Some(mode);
    Ok(e)
}

/// `A = (1/L) Σ |ψ_l⟩⟨ψ_l|` restricted to the supported levels.
pub fn ensemble_average(ensemble: &RpEnsemble) -> DMatrix<C64> {
    let n = ensemble.weights.len();
    let mut a = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for m in &ensemble.members {
        let v = m.amplitudes.rows(0, n);
        a += v * v.adjoint();
    }
    a / C64::new(ensemble.len() as f64, 0.0)
}

/// `‖A − diag(w)‖_max`; for uniform weights the limit is `I/N`.
pub fn identity_resolution_error(ensemble: &RpEnsemble) -> f64 {
    let a = ensemble_average(ensemble);
    let n = a.nrows();
    let mut err: f64 = 0.0;
    for c in 0..n {
        for r in 0..n {
            let expected = if r == c { ensemble.weights[r] } else { 0.0 };
            err = err.max((a[(r, c)] - expected).norm());
        }
    }
    err
}

/// `1 − Σ_i w_i ⟨ψ_i(T)|Ô|ψ_i(T)⟩` over every ground level with `w_i > 0`.
pub fn full_space_validation(
    ham: &ControlledHamiltonian,
    field: &ControlField,
    target: &TargetOperator,
    weights: &[f64],
) -> Result<f64> {
    let w = normalized_weights(weights)?;
    let dim = ham.dim();
    if w.len() > dim {
        return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
    }
    let states: Vec<StateVector> =
        w.iter().enumerate().filter(|(_, &wi)| wi > 0.0).map(|(i, &wi)| StateVector::new(StateVector::basis(dim, i).amplitudes, wi)).collect();
    let finals = propagate_final(ham, &states, field)?;
    let fitness: f64 = finals.iter().map(|s| s.weight * target.expectation(&s.amplitudes)).sum();
    Ok(1.0 - fitness)
}
