//! Krotov optimal control over a weighted set of initial states.
//!
//! The objective is `J_max = Σ_k p_k ⟨ψ_k(T)|Ô|ψ_k(T)⟩` with the penalty
//! `J_penal = −α Σ_j |ε_j − ε_ref,j|² dt`, where the reference is the
//! previous iteration's field. Each sweep updates sample `j` from the
//! previous-iteration costate at `t_{j+1}` and the state already propagated
//! with the updated samples `0..j`:
//!
//! `Δε_j = Σ_k p_k (2Re⟨χ_k|∂U_j/∂Re ε|ψ_k⟩ + i·2Re⟨χ_k|∂U_j/∂Im ε|ψ_k⟩) / (2α dt)`.
//!
//! The derivative of the step propagator is exact, so at a fixed field the
//! update equals the gradient of `J_max + J_penal` scaled by `1/(2α dt)`.
//! As `dt → 0` it reduces to the familiar `−(1/α) Im⟨χ|μ|ψ⟩` form.

use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{RotorBasis, Surface};
use crate::operator::{OperatorKind, OperatorMatrix, HERMITIAN_TOL};
use crate::propagation::{
    propagate_backward, propagate_final, step_all, ControlField, ControlledHamiltonian, StateVector, StepDecomposition,
    Trajectory, TrajectoryStorage,
};
use crate::report::{emit_csv, Cell};
use crate::{Error, Result, C64};

/// Tolerance on `Σ p_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-10;

/// Stagnation: relative fitness gain below this over [`STAGNATION_WINDOW`]
/// iterations stops the run.
pub const STAGNATION_RTOL: f64 = 1e-8;
pub const STAGNATION_WINDOW: usize = 10;

/// Allowed-subspace cut for the canonical projector target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSpec {
    /// Highest allowed ground J; `None` means `j_max_g − 1`.
    pub j_cut_g: Option<i32>,
    /// Highest allowed excited J; `None` means `j_max_e − 1`.
    pub j_cut_e: Option<i32>,
}

/// Hermitian target `Ô`; diagonal targets are applied elementwise.
#[derive(Clone, Debug)]
pub struct TargetOperator {
    op: OperatorMatrix,
    diagonal: Option<Vec<f64>>,
}

impl TargetOperator {
    pub fn from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        let op = OperatorMatrix::new(matrix, OperatorKind::Hermitian)?;
        let m = op.matrix();
        let is_diag = m.iter().enumerate().all(|(idx, z)| {
            let (r, c) = (idx % m.nrows(), idx / m.nrows());
            r == c || z.norm() == 0.0
        });
        let diagonal = is_diag.then(|| (0..m.nrows()).map(|i| m[(i, i)].re).collect());
        Ok(Self { op, diagonal })
    }

    /// Projector onto the basis states flagged in `allowed`.
    pub fn projector(allowed: &[bool]) -> Result<Self> {
        if !allowed.iter().any(|&a| a) {
            return Err(Error::EmptyTarget);
        }
        let diag: Vec<f64> = allowed.iter().map(|&a| if a { 1.0 } else { 0.0 }).collect();
        let op = OperatorMatrix::hermitian_from_real_diagonal(&diag);
        Ok(Self { op, diagonal: Some(diag) })
    }

    pub fn identity(dim: usize) -> Self {
        Self::projector(&vec![true; dim]).expect("nonempty")
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        self.op.matrix()
    }

    pub fn diagonal(&self) -> Option<&[f64]> {
        self.diagonal.as_deref()
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        match &self.diagonal {
            Some(d) => DVector::from_iterator(v.len(), v.iter().zip(d).map(|(z, w)| z * *w)),
            None => self.op.matrix() * v,
        }
    }

    pub fn expectation(&self, v: &DVector<C64>) -> f64 {
        match &self.diagonal {
            Some(d) => v.iter().zip(d).map(|(z, w)| z.norm_sqr() * w).sum(),
            None => v.dotc(&(self.op.matrix() * v)).re,
        }
    }
}

/// Projector onto ground states with `J ≤ j_cut_g` and excited states with
/// `J ≤ j_cut_e`.
pub fn build_target_operator(spec: &TargetSpec, basis: &RotorBasis) -> Result<TargetOperator> {
    let j_max_g = basis.ground_states().iter().map(|s| s.j).max().unwrap_or(0);
    let j_max_e = basis.excited_states().iter().map(|s| s.j).max().unwrap_or(0);
    let cut_g = spec.j_cut_g.unwrap_or(j_max_g - 1);
    let cut_e = spec.j_cut_e.unwrap_or(j_max_e - 1);
    let allowed: Vec<bool> = basis
        .states()
        .iter()
        .map(|s| match s.surface {
            Surface::Ground => s.j <= cut_g,
            Surface::Excited => s.j <= cut_e,
        })
        .collect();
    TargetOperator::projector(&allowed)
}

fn check_weights(states: &[StateVector]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::InvalidWeights("empty ensemble".into()));
    }
    if let Some(s) = states.iter().find(|s| !(s.weight >= 0.0)) {
        return Err(Error::InvalidWeights(format!("negative weight {}", s.weight)));
    }
    let total: f64 = states.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidWeights(format!("weights sum to {total}")));
    }
    Ok(())
}

fn fitness_of(finals: &[DVector<C64>], weights: &[f64], target: &TargetOperator) -> f64 {
    finals.iter().zip(weights).map(|(v, w)| w * target.expectation(v)).sum()
}

/// `Σ_k p_k ⟨ψ_k(T)|Ô|ψ_k(T)⟩`, with `p_k` taken from the state weights.
pub fn objective_value(
    ham: &ControlledHamiltonian,
    states: &[StateVector],
    field: &ControlField,
    target: &TargetOperator,
) -> Result<f64> {
    check_weights(states)?;
    let finals = propagate_final(ham, states, field)?;
    Ok(finals.iter().map(|s| s.weight * target.expectation(&s.amplitudes)).sum())
}

/// `α Σ |ε − ε_ref|² dt`, the magnitude of the penalty term.
pub fn penalty_value(field: &ControlField, reference: &ControlField, alpha: f64) -> f64 {
    field
        .samples()
        .iter()
        .zip(reference.samples())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        * alpha
        * field.dt()
}

/// Costate trajectories with `χ_k(T) = Ô ψ_k(T)`, propagated backward
/// under `field`.
pub fn backward_costates<'a>(
    ham: &'a ControlledHamiltonian,
    states_at_t: &[StateVector],
    target: &TargetOperator,
    field: &ControlField,
    storage: TrajectoryStorage,
) -> Result<Vec<Trajectory<'a>>> {
    states_at_t
        .par_iter()
        .map(|s| propagate_backward(ham, &StateVector::new(target.apply(&s.amplitudes), s.weight), field, storage))
        .collect()
}

/// `Σ_k p_k (2Re⟨χ_k|∂U/∂Re ε|ψ_k⟩ + i·2Re⟨χ_k|∂U/∂Im ε|ψ_k⟩)` for one step
/// `U = dec`, with `χ_k` at the end and `ψ_k` at the start of the step.
/// Members are reduced in input order.
pub fn step_gradient(
    ham: &ControlledHamiltonian,
    dec: &StepDecomposition,
    costates: &[DVector<C64>],
    states: &[DVector<C64>],
    weights: &[f64],
) -> C64 {
    let kernel = dec.gradient_kernel(ham);
    let parts: Vec<C64> = costates
        .par_iter()
        .zip(states.par_iter())
        .map(|(chi, psi)| {
            let o = kernel.overlaps(ham, dec, chi, psi);
            C64::new(2.0 * o.d_re.re, 2.0 * o.d_im.re)
        })
        .collect();
    parts.iter().zip(weights).fold(C64::new(0.0, 0.0), |acc, (g, w)| acc + g * *w)
}

/// New field sample `ε + g/(2α dt)` from the step gradient `g`.
pub fn field_update(eps: C64, gradient: C64, alpha: f64, dt: f64) -> Result<C64> {
    if !(alpha > 0.0) {
        return Err(Error::NonPositiveAlpha(alpha));
    }
    Ok(eps + gradient / (2.0 * alpha * dt))
}

/// `∂J_max/∂Re ε_j + i ∂J_max/∂Im ε_j` for every sample at a fixed field.
pub fn functional_gradient(
    ham: &ControlledHamiltonian,
    states: &[StateVector],
    field: &ControlField,
    target: &TargetOperator,
) -> Result<Vec<C64>> {
    check_weights(states)?;
    let weights: Vec<f64> = states.iter().map(|s| s.weight).collect();
    let finals = propagate_final(ham, states, field)?;
    let mut chi: Vec<DVector<C64>> = finals.iter().map(|s| target.apply(&s.amplitudes)).collect();
    let mut decs = Vec::with_capacity(field.len());
    for &eps in field.samples().iter().rev() {
        let dec = ham.decompose(eps, field.dt());
        step_all(ham, &dec, &mut chi, true);
        decs.push(dec);
    }
    decs.reverse();
    // chi now holds χ(t_0); walk forward with both
    let mut psi: Vec<DVector<C64>> = states.iter().map(|s| s.amplitudes.clone()).collect();
    let mut out = Vec::with_capacity(field.len());
    for dec in &decs {
        step_all(ham, dec, &mut chi, false);
        out.push(step_gradient(ham, dec, &chi, &psi, &weights));
        step_all(ham, dec, &mut psi, false);
    }
    Ok(out)
}

fn default_alpha_decay() -> f64 {
    1.0
}

fn default_cache_budget() -> usize {
    512 << 20
}

/// Optimizer settings.
#[derive(Clone, Debug)]
pub struct KrotovConfig {
    /// Penalty weight; larger means smaller, safer steps.
    pub alpha: f64,
    pub max_iters: usize,
    pub fitness_target: f64,
    pub guess_field: ControlField,
    /// `α_l = α · alpha_decay^(l-1)` for iteration `l` (1-based).
    pub alpha_decay: f64,
    /// Keep a field snapshot every this many iterations (0: none).
    pub snapshot_every: usize,
    /// Memory allowed for caching per-step eigendecompositions; above it
    /// every step is rediagonalized.
    pub cache_budget_bytes: usize,
}

impl KrotovConfig {
    pub fn new(alpha: f64, max_iters: usize, fitness_target: f64, guess_field: ControlField) -> Self {
        Self {
            alpha,
            max_iters,
            fitness_target,
            guess_field,
            alpha_decay: default_alpha_decay(),
            snapshot_every: 0,
            cache_budget_bytes: default_cache_budget(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::NonPositiveAlpha(self.alpha));
        }
        if !(self.fitness_target > 0.0 && self.fitness_target <= 1.0) {
            return Err(Error::InvalidParams(format!("fitness_target {} outside (0, 1]", self.fitness_target)));
        }
        if !(self.alpha_decay > 0.0) || !self.alpha_decay.is_finite() {
            return Err(Error::InvalidParams(format!("alpha_decay must be positive, got {}", self.alpha_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetReached,
    MaxIters,
    Stagnation,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::TargetReached => "target-reached",
            StopReason::MaxIters => "max-iters",
            StopReason::Stagnation => "stagnation",
        })
    }
}

/// Optimization history. Index 0 is the guess field.
#[derive(Clone, Debug)]
pub struct KrotovRun {
    pub fitness: Vec<f64>,
    /// `α_l Σ|Δε|² dt` of the update that produced each entry (0 for the guess).
    pub penalty: Vec<f64>,
    pub field_norm: Vec<f64>,
    pub snapshots: Vec<(usize, ControlField)>,
    pub stop_reason: StopReason,
}

impl KrotovRun {
    pub fn iterations(&self) -> usize {
        self.fitness.len() - 1
    }

    pub fn final_fitness(&self) -> f64 {
        *self.fitness.last().expect("guess fitness is always recorded")
    }

    pub const HEADER: [&'static str; 4] = ["iteration", "fitness", "penalty", "field_norm"];

    pub fn rows(&self) -> Vec<Vec<Cell>> {
        (0..self.fitness.len())
            .map(|i| vec![Cell::from(i), self.fitness[i].into(), self.penalty[i].into(), self.field_norm[i].into()])
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        emit_csv(path, &Self::HEADER, &self.rows())
    }
}

/// Iterates Krotov sweeps from `config.guess_field` until the fitness target,
/// the iteration budget or stagnation.
pub fn optimize(
    ham: &ControlledHamiltonian,
    ensemble: &[StateVector],
    target: &TargetOperator,
    config: &KrotovConfig,
) -> Result<(ControlField, KrotovRun)> {
    config.validate()?;
    check_weights(ensemble)?;
    if target.dim() != ham.dim() {
        return Err(Error::DimensionMismatch { expected: ham.dim(), got: target.dim() });
    }
    let weights: Vec<f64> = ensemble.iter().map(|s| s.weight).collect();
    let psi0: Vec<DVector<C64>> = ensemble.iter().map(|s| s.amplitudes.clone()).collect();
    let mut field = config.guess_field.clone();
    let dt = field.dt();
    let m = field.len();

    let wrap = |iteration: usize| move |e: Error| Error::Optimization { iteration, source: Box::new(e) };

    let finals = propagate_final(ham, ensemble, &field).map_err(wrap(0))?;
    let mut psi_t: Vec<DVector<C64>> = finals.into_iter().map(|s| s.amplitudes).collect();
    let mut run = KrotovRun {
        fitness: vec![fitness_of(&psi_t, &weights, target)],
        penalty: vec![0.0],
        field_norm: vec![field.norm()],
        snapshots: Vec::new(),
        stop_reason: StopReason::MaxIters,
    };
    if config.snapshot_every > 0 {
        run.snapshots.push((0, field.clone()));
    }
    info!("krotov: guess fitness {:.12}", run.fitness[0]);
    if run.fitness[0] >= config.fitness_target {
        run.stop_reason = StopReason::TargetReached;
        return Ok((field, run));
    }

    // decompositions of the current field, if they fit the budget
    let probe = ham.decompose(field.samples().first().copied().unwrap_or_default(), dt).heap_bytes();
    let use_cache = probe.saturating_mul(m) <= config.cache_budget_bytes;
    let mut cache: Vec<StepDecomposition> = Vec::new();

    for iter in 1..=config.max_iters {
        let alpha = config.alpha * config.alpha_decay.powi(iter as i32 - 1);

        // backward pass under the current field, keeping only χ(t_0)
        let mut chi: Vec<DVector<C64>> = psi_t.iter().map(|v| target.apply(v)).collect();
        if use_cache && cache.len() != m {
            cache = field.samples().iter().map(|&e| ham.decompose(e, dt)).collect();
        }
        for k in (0..m).rev() {
            if use_cache {
                step_all(ham, &cache[k], &mut chi, true);
            } else {
                step_all(ham, &ham.decompose(field.samples()[k], dt), &mut chi, true);
            }
        }

        // sequential sweep
        let mut psi = psi0.clone();
        let mut new_cache = Vec::with_capacity(if use_cache { m } else { 0 });
        let mut penalty = 0.0;
        for k in 0..m {
            let old_eps = field.samples()[k];
            let fresh;
            let old_dec = match cache.get(k) {
                Some(d) => d,
                None => {
                    fresh = ham.decompose(old_eps, dt);
                    &fresh
                }
            };
            step_all(ham, old_dec, &mut chi, false);
            let g = step_gradient(ham, old_dec, &chi, &psi, &weights);
            let new_eps = field_update(old_eps, g, alpha, dt).map_err(wrap(iter))?;
            if !new_eps.re.is_finite() || !new_eps.im.is_finite() {
                return Err(wrap(iter)(Error::InvalidField(format!("non-finite update at step {k}"))));
            }
            penalty += (new_eps - old_eps).norm_sqr();
            field.samples_mut()[k] = new_eps;
            let new_dec = ham.decompose(new_eps, dt);
            step_all(ham, &new_dec, &mut psi, false);
            if use_cache {
                new_cache.push(new_dec);
            }
        }
        cache = new_cache;
        psi_t = psi;

        let fitness = fitness_of(&psi_t, &weights, target);
        run.fitness.push(fitness);
        run.penalty.push(alpha * penalty * dt);
        run.field_norm.push(field.norm());
        if config.snapshot_every > 0 && iter % config.snapshot_every == 0 {
            run.snapshots.push((iter, field.clone()));
        }
        debug!("krotov: iteration {iter} fitness {fitness:.12} penalty {:.3e}", alpha * penalty * dt);

        if fitness >= config.fitness_target {
            run.stop_reason = StopReason::TargetReached;
            break;
        }
        if iter >= STAGNATION_WINDOW {
            let before = run.fitness[iter - STAGNATION_WINDOW];
            if (fitness - before) <= STAGNATION_RTOL * before.abs().max(f64::MIN_POSITIVE) {
                run.stop_reason = StopReason::Stagnation;
                break;
            }
        }
    }
    info!("krotov: stopped ({}) after {} iterations at fitness {:.12}", run.stop_reason, run.iterations(), run.final_fitness());
    Ok((field, run))
}

/// Checks that a target is a valid fitness operator: Hermitian and
/// `0 ≤ Ô ≤ I` for diagonal targets.
pub fn validate_target(target: &TargetOperator) -> Result<()> {
    target.op.ensure_hermitian()?;
    if let Some(d) = target.diagonal() {
        if let Some(x) = d.iter().find(|x| !(-HERMITIAN_TOL..=1.0 + HERMITIAN_TOL).contains(*x)) {
            return Err(Error::InvalidParams(format!("diagonal target entry {x} outside [0, 1]")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
