//! Spontaneous emission, the population-level cooling-cycle map and its
//! stationary state.
//!
//! One cycle is a coherent pulse followed by complete decay of the excited
//! surface. Coherences do not survive the decay, so a cycle acts on
//! ground-manifold populations as a column-stochastic matrix.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::basis::{dipole_component, BasisState, MolecularParams, RotorBasis};
use crate::propagation::{propagate_final, ControlField, ControlledHamiltonian, StateVector};
use crate::report::{emit_csv, Cell};
use crate::{Error, Result};

/// Maps with more ground levels than this use power iteration.
pub const DENSE_EIGEN_LIMIT: usize = 512;

/// Multiplicity threshold on |λ − 1| for the unit eigenvalue.
pub const UNIT_EIGENVALUE_TOL: f64 = 1e-8;

/// Emission rate from `excited` to `ground`, summed over all three lab
/// polarizations, in units of `gamma0`·s⁻¹ (ω³ and the density of final
/// states are folded into `gamma0`).
pub fn emission_rate(ground: &BasisState, excited: &BasisState, params: &MolecularParams) -> f64 {
    let s: f64 = (-1..=1)
        .map(|p| dipole_component(ground, excited, p, params.phase).powi(2))
        .sum();
    params.gamma0 * params.mu0 * params.mu0 * s
}

/// Rate matrix `Γ[f, i]` from excited level `i` to ground level `f`
/// (rows: ground levels, columns: excited levels, canonical order).
pub fn decay_rates(basis: &RotorBasis, params: &MolecularParams) -> DMatrix<f64> {
    let g = basis.ground_states();
    let e = basis.excited_states();
    DMatrix::from_fn(g.len(), e.len(), |f, i| emission_rate(&g[f], &e[i], params))
}

/// Fraction of each excited level's total emission rate that lands on ground
/// levels above the basis truncation.
pub fn leak_fractions(basis: &RotorBasis, params: &MolecularParams) -> Vec<f64> {
    basis
        .excited_states()
        .iter()
        .map(|e| {
            let mut inside = 0.0;
            let mut outside = 0.0;
            for jg in (e.j - 1).max(0)..=(e.j + 1) {
                for mg in (e.m - 1).max(-jg)..=(e.m + 1).min(jg) {
                    let r = emission_rate(&BasisState::ground(jg, mg), e, params);
                    if jg <= params.j_max_g { inside += r } else { outside += r }
                }
            }
            if inside + outside > 0.0 { outside / (inside + outside) } else { 0.0 }
        })
        .collect()
}

/// Decay probabilities, rows ground levels, columns excited levels.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchingMatrix {
    matrix: DMatrix<f64>,
}

impl BranchingMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Normalizes each column of `rates`. A column with zero total rate is an
/// error naming that excited level.
pub fn branching_matrix(rates: &DMatrix<f64>, basis: &RotorBasis) -> Result<BranchingMatrix> {
    let mut matrix = rates.clone();
    for (c, mut col) in matrix.column_iter_mut().enumerate() {
        let total: f64 = col.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DarkState(basis.excited_states()[c].label()));
        }
        col /= total;
    }
    Ok(BranchingMatrix { matrix })
}

/// Everything needed to turn a field into a cycle map.
#[derive(Clone, Debug)]
pub struct CycleModel {
    pub basis: RotorBasis,
    pub hamiltonian: ControlledHamiltonian,
    pub branching: BranchingMatrix,
    pub leak: Vec<f64>,
}

impl CycleModel {
    pub fn new(basis: RotorBasis, hamiltonian: ControlledHamiltonian, params: &MolecularParams) -> Result<Self> {
        let rates = decay_rates(&basis, params);
        let branching = branching_matrix(&rates, &basis)?;
        let leak = leak_fractions(&basis, params);
        Ok(Self { basis, hamiltonian, branching, leak })
    }

    /// Pulse then complete decay, applied to every ground basis level.
    pub fn cycle_map(&self, field: &ControlField) -> Result<CycleMap> {
        let ng = self.basis.n_ground();
        let n = self.basis.len();
        if field.samples().iter().all(|s| s.norm() == 0.0) {
            return Ok(CycleMap { matrix: DMatrix::identity(ng, ng), leaked: vec![0.0; ng], field: field.clone() });
        }
        let inputs: Vec<StateVector> = (0..ng).map(|i| StateVector::basis(n, i)).collect();
        let finals = propagate_final(&self.hamiltonian, &inputs, field)?;
        let mut matrix = DMatrix::zeros(ng, ng);
        let mut leaked = vec![0.0; ng];
        for (col, psi) in finals.iter().enumerate() {
            let pops = psi.populations();
            let excited = DVector::from_column_slice(&pops[ng..]);
            let decayed = self.branching.matrix() * &excited;
            for row in 0..ng {
                matrix[(row, col)] = pops[row] + decayed[row];
            }
            leaked[col] = excited.iter().zip(&self.leak).map(|(p, l)| p * l).sum();
        }
        Ok(CycleMap { matrix, leaked, field: field.clone() })
    }
}

/// Column-stochastic map on ground-manifold populations.
#[derive(Clone, Debug)]
pub struct CycleMap {
    matrix: DMatrix<f64>,
    leaked: Vec<f64>,
    field: ControlField,
}

impl CycleMap {
    /// Wraps an arbitrary matrix, e.g. for analysis of hand-built maps.
    pub fn from_matrix(matrix: DMatrix<f64>, field: ControlField) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: matrix.ncols() });
        }
        let leaked = vec![0.0; matrix.ncols()];
        Ok(Self { matrix, leaked, field })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn field(&self) -> &ControlField {
        &self.field
    }

    /// Per-column probability that would have decayed above the truncation.
    pub fn leaked(&self) -> &[f64] {
        &self.leaked
    }

    /// Leaked probability per cycle for population vector `p`.
    pub fn leaked_for(&self, p: &[f64]) -> f64 {
        self.leaked.iter().zip(p).map(|(l, x)| l * x).sum()
    }

    /// max |column sum − 1| and the most negative entry.
    pub fn stochasticity_defect(&self) -> (f64, f64) {
        let col_dev = self.matrix.column_iter().map(|c| (c.sum() - 1.0).abs()).fold(0.0, f64::max);
        let min = self.matrix.iter().copied().fold(f64::INFINITY, f64::min);
        (col_dev, min)
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(p)).as_slice().to_vec()
    }

    /// Dense CSV with a header of ground-level labels; row `r` is the
    /// destination level, column `c` the source level.
    pub fn write_csv(&self, path: &Path, basis: &RotorBasis) -> Result<()> {
        let labels: Vec<String> = basis.ground_states().iter().map(BasisState::label).collect();
        let mut header: Vec<&str> = vec!["to\\from"];
        header.extend(labels.iter().map(String::as_str));
        let rows: Vec<Vec<Cell>> = (0..self.dim())
            .map(|r| {
                let mut row = vec![Cell::from(labels[r].clone())];
                row.extend((0..self.dim()).map(|c| Cell::from(self.matrix[(r, c)])));
                row
            })
            .collect();
        emit_csv(path, &header, &rows)
    }
}

/// Stationary distribution and convergence rate of a cycle map.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub distribution: Vec<f64>,
    /// Largest modulus among the non-unit eigenvalues.
    pub lambda2: f64,
    /// `1 − |λ₂|`.
    pub spectral_gap: f64,
    /// ‖map·p − p‖_∞.
    pub residual: f64,
}

/// Perron vector (normalized to sum 1, tiny negatives clipped) and spectral
/// gap. A unit eigenvalue of multiplicity > 1 is reported as
/// [`Error::ReducibleCycleMap`] with a basis of the unit eigenspace.
pub fn steady_state(map: &CycleMap) -> Result<SteadyState> {
    if map.dim() > DENSE_EIGEN_LIMIT {
        return power_iteration_steady_state(map, 1e-15, 1_000_000);
    }
    let p = map.matrix();
    let n = p.nrows();
    let eig = p.complex_eigenvalues();
    let mut moduli: Vec<(f64, f64)> = eig.iter().map(|l| ((l - nalgebra::Complex::new(1.0, 0.0)).norm(), l.norm())).collect();
    let unit_count = moduli.iter().filter(|(d, _)| *d < UNIT_EIGENVALUE_TOL).count();

    let shifted = p - DMatrix::identity(n, n);
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));

    if unit_count > 1 {
        let vectors = order[..unit_count]
            .iter()
            .map(|&k| normalize_sum(v_t.row(k).iter().copied().collect()))
            .collect();
        return Err(Error::ReducibleCycleMap { multiplicity: unit_count, vectors });
    }

    let null = v_t.row(order[0]).iter().copied().collect::<Vec<f64>>();
    let mut dist = normalize_sum(null);
    for x in dist.iter_mut() {
        if *x < 0.0 && *x >= -1e-12 {
            *x = 0.0;
        }
    }
    let total: f64 = dist.iter().sum();
    dist.iter_mut().for_each(|x| *x /= total);

    moduli.sort_by(|a, b| a.0.total_cmp(&b.0));
    let lambda2 = moduli.iter().skip(1).map(|m| m.1).fold(0.0, f64::max);
    let residual = residual_inf(map, &dist);
    Ok(SteadyState { distribution: dist, lambda2, spectral_gap: 1.0 - lambda2, residual })
}

fn normalize_sum(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s.abs() > f64::EPSILON {
        v.iter_mut().for_each(|x| *x /= s);
    } else {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn residual_inf(map: &CycleMap, p: &[f64]) -> f64 {
    map.apply(p).iter().zip(p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Steady state by repeated application from the uniform distribution; the
/// subdominant modulus is estimated by power iteration on the deflated map
/// `P − p_ss 1ᵀ`.
pub fn power_iteration_steady_state(map: &CycleMap, tol: f64, max_iters: usize) -> Result<SteadyState> {
    let n = map.dim();
    let mut p = vec![1.0 / n as f64; n];
    for _ in 0..max_iters {
        let next = map.apply(&p);
        let s: f64 = next.iter().sum();
        let next: Vec<f64> = next.iter().map(|x| x / s).collect();
        let delta = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        p = next;
        if delta < tol {
            break;
        }
    }
    // deflated iteration for |λ₂|; geometric mean over a window handles a
    // complex subdominant pair
    let mut q: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -0.7 }).collect();
    const WARMUP: usize = 200;
    const WINDOW: usize = 400;
    let mut log_growth = 0.0;
    let mut lambda2 = 0.0;
    for it in 0..WARMUP + WINDOW {
        let s: f64 = q.iter().sum();
        let mut next = map.apply(&q);
        for (x, ps) in next.iter_mut().zip(&p) {
            *x -= ps * s;
        }
        let norm_n = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm_n == 0.0 || !norm_n.is_finite() {
            log_growth = f64::NEG_INFINITY;
            break;
        }
        if it >= WARMUP {
            log_growth += norm_n.ln();
        }
        q = next.iter().map(|x| x / norm_n).collect();
    }
    if log_growth.is_finite() {
        lambda2 = (log_growth / WINDOW as f64).exp();
    }
    let residual = residual_inf(map, &p);
    Ok(SteadyState { distribution: p, lambda2, spectral_gap: 1.0 - lambda2, residual })
}

/// `[p0, M p0, M² p0, …]`, `n + 1` entries.
pub fn iterate_cycles(map: &CycleMap, p0: &[f64], n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(p0.to_vec());
    for k in 0..n {
        let next = map.apply(&out[k]);
        out.push(next);
    }
    out
}

/// `M^n p0` without keeping the intermediate iterates.
pub fn iterate_to(map: &CycleMap, p0: &[f64], n: usize) -> Vec<f64> {
    let mut p = p0.to_vec();
    for _ in 0..n {
        p = map.apply(&p);
    }
    p
}
