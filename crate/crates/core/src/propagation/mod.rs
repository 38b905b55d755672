//! Piecewise-constant propagation under `H(ε) = H₀ − (μ₊ ε + μ₋ ε*)`.
//!
//! `μ₊` is the ground→excited block of the dipole operator (rows excited,
//! columns ground) and `μ₋ = μ₊†`. The Hamiltonian is split once into its
//! connected sectors (for a z-polarized field these are the `M` blocks), and
//! every step exponential is taken exactly from a per-sector Hermitian
//! eigendecomposition, so each step is unitary to machine precision.

mod field;
mod trajectory;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

pub use field::{ControlField, FIELD_MAGIC};
pub use trajectory::{Trajectory, TrajectoryStorage};

use crate::operator::{OperatorKind, OperatorMatrix};
use crate::units::HBAR;
use crate::{Error, Result, C64};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Sector size above which sectors are diagonalized in parallel.
const PARALLEL_DIM: usize = 96;

/// A pure state over the canonical basis with its ensemble weight.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub amplitudes: DVector<C64>,
    pub weight: f64,
}

impl StateVector {
    pub fn new(amplitudes: DVector<C64>, weight: f64) -> Self {
        Self { amplitudes, weight }
    }

    /// Basis vector `|index⟩` with unit weight.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut a = DVector::from_element(dim, ZERO);
        a[index] = C64::new(1.0, 0.0);
        Self { amplitudes: a, weight: 1.0 }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    /// `⟨ψ|A|ψ⟩`, real part (A is assumed Hermitian).
    pub fn expectation(&self, op: &DMatrix<C64>) -> f64 {
        self.amplitudes.dotc(&(op * &self.amplitudes)).re
    }
}

#[derive(Clone, Debug)]
struct Sector {
    indices: Vec<usize>,
    h0: DMatrix<C64>,
    raise: DMatrix<C64>,
    lower: DMatrix<C64>,
}

impl Sector {
    fn hamiltonian(&self, eps: C64) -> DMatrix<C64> {
        let mut h = self.h0.clone();
        h -= &self.raise * eps;
        h -= &self.lower * eps.conj();
        h
    }

    fn gather(&self, v: &DVector<C64>) -> DVector<C64> {
        DVector::from_iterator(self.indices.len(), self.indices.iter().map(|&i| v[i]))
    }
}

/// Drift plus complex-envelope dipole coupling, pre-split into sectors.
#[derive(Clone, Debug)]
pub struct ControlledHamiltonian {
    dim: usize,
    n_ground: usize,
    h0: OperatorMatrix,
    mu: OperatorMatrix,
    sectors: Vec<Sector>,
}

impl ControlledHamiltonian {
    /// `h0` and `mu` over a basis whose first `n_ground` states are the lower
    /// surface. Both must be Hermitian.
    pub fn new(h0: OperatorMatrix, mu: OperatorMatrix, n_ground: usize) -> Result<Self> {
        h0.ensure_hermitian()?;
        mu.ensure_hermitian()?;
        let dim = h0.dim();
        if mu.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: mu.dim() });
        }
        if n_ground > dim {
            return Err(Error::DimensionMismatch { expected: dim, got: n_ground });
        }
        let sectors = connected_sectors(h0.matrix(), mu.matrix())
            .into_iter()
            .map(|indices| {
                let n = indices.len();
                let h = DMatrix::from_fn(n, n, |a, b| h0.get(indices[a], indices[b]));
                let raise = DMatrix::from_fn(n, n, |a, b| {
                    let (i, j) = (indices[a], indices[b]);
                    if i >= n_ground && j < n_ground { mu.get(i, j) } else { ZERO }
                });
                let lower = raise.adjoint();
                Sector { indices, h0: h, raise, lower }
            })
            .collect();
        Ok(Self { dim, n_ground, h0, mu, sectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_ground(&self) -> usize {
        self.n_ground
    }

    pub fn h0(&self) -> &OperatorMatrix {
        &self.h0
    }

    pub fn mu(&self) -> &OperatorMatrix {
        &self.mu
    }

    pub fn sector_sizes(&self) -> Vec<usize> {
        self.sectors.iter().map(|s| s.indices.len()).collect()
    }

    /// Dense `H(ε)`.
    pub fn hamiltonian(&self, eps: C64) -> DMatrix<C64> {
        let mut h = self.h0.matrix().clone();
        for s in &self.sectors {
            let hs = s.hamiltonian(eps);
            for (a, &i) in s.indices.iter().enumerate() {
                for (b, &j) in s.indices.iter().enumerate() {
                    h[(i, j)] = hs[(a, b)];
                }
            }
        }
        h
    }

    /// Upper bound on the spectral radius of `H(ε)` for `|ε| <= eps_max`.
    pub fn energy_scale(&self, eps_max: f64) -> f64 {
        let h0_max = (0..self.dim).map(|i| self.h0.get(i, i).norm()).fold(0.0, f64::max);
        let mu_norm = self
            .sectors
            .iter()
            .map(|s| s.raise.iter().map(|x| x.norm()).fold(0.0, f64::max) * s.indices.len() as f64)
            .fold(0.0, f64::max);
        h0_max + mu_norm * eps_max
    }

    /// Time step with `(max|E| + max|μ·ε|)·dt/ħ <= ratio`.
    pub fn suggest_dt(&self, eps_max: f64, ratio: f64) -> f64 {
        let scale = self.energy_scale(eps_max).max(f64::MIN_POSITIVE);
        ratio * HBAR / scale
    }

    /// Diagonalizes every sector of `H(ε)` for a step of length `dt`.
    pub fn decompose(&self, eps: C64, dt: f64) -> StepDecomposition {
        let tau = dt / HBAR;
        let eig = |s: &Sector| {
            let SymmetricEigen { eigenvalues, eigenvectors } = SymmetricEigen::new(s.hamiltonian(eps));
            let phases = eigenvalues.map(|l| C64::from_polar(1.0, -l * tau));
            SectorEig { values: eigenvalues, vectors: eigenvectors, phases }
        };
        let sectors = if self.dim >= PARALLEL_DIM {
            self.sectors.par_iter().map(eig).collect()
        } else {
            self.sectors.iter().map(eig).collect()
        };
        StepDecomposition { sectors, tau, eps }
    }

    /// Dense unitary `exp(-i H(ε) dt/ħ)`.
    pub fn step_propagator(&self, eps: C64, dt: f64) -> Result<OperatorMatrix> {
        if !(dt > 0.0) || !eps.re.is_finite() || !eps.im.is_finite() {
            return Err(Error::InvalidField(format!("bad step: eps={eps}, dt={dt}")));
        }
        let dec = self.decompose(eps, dt);
        OperatorMatrix::new(dec.to_dense(self), OperatorKind::Unitary)
    }
}

/// Free-function form of [`ControlledHamiltonian::step_propagator`].
pub fn step_propagator(ham: &ControlledHamiltonian, eps: C64, dt: f64) -> Result<OperatorMatrix> {
    ham.step_propagator(eps, dt)
}

fn connected_sectors(h0: &DMatrix<C64>, mu: &DMatrix<C64>) -> Vec<Vec<usize>> {
    let n = h0.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if h0[(i, j)].norm() != 0.0 || mu[(i, j)].norm() != 0.0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

#[derive(Clone, Debug)]
struct SectorEig {
    values: DVector<f64>,
    vectors: DMatrix<C64>,
    phases: DVector<C64>,
}

/// Per-sector eigendecomposition of one step's Hamiltonian.
#[derive(Clone, Debug)]
pub struct StepDecomposition {
    sectors: Vec<SectorEig>,
    tau: f64,
    eps: C64,
}

/// `⟨χ|∂U/∂Re ε|ψ⟩` and `⟨χ|∂U/∂Im ε|ψ⟩` for one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOverlaps {
    pub d_re: C64,
    pub d_im: C64,
}

impl StepDecomposition {
    pub fn eps(&self) -> C64 {
        self.eps
    }

    /// Approximate heap footprint, for cache budgeting.
    pub fn heap_bytes(&self) -> usize {
        self.sectors
            .iter()
            .map(|e| e.values.len() * 8 + (e.vectors.len() + e.phases.len()) * std::mem::size_of::<C64>())
            .sum()
    }

    fn apply_with(&self, ham: &ControlledHamiltonian, v: &DVector<C64>, adjoint: bool) -> DVector<C64> {
        let mut out = v.clone();
        for (s, e) in ham.sectors.iter().zip(&self.sectors) {
            let x = s.gather(v);
            let mut a = e.vectors.ad_mul(&x);
            for (ai, ph) in a.iter_mut().zip(e.phases.iter()) {
                *ai *= if adjoint { ph.conj() } else { *ph };
            }
            let y = &e.vectors * a;
            for (k, &i) in s.indices.iter().enumerate() {
                out[i] = y[k];
            }
        }
        out
    }

    /// `U v`.
    pub fn apply(&self, ham: &ControlledHamiltonian, v: &DVector<C64>) -> DVector<C64> {
        self.apply_with(ham, v, false)
    }

    /// `U† v`.
    pub fn apply_adjoint(&self, ham: &ControlledHamiltonian, v: &DVector<C64>) -> DVector<C64> {
        self.apply_with(ham, v, true)
    }

    pub fn to_dense(&self, ham: &ControlledHamiltonian) -> DMatrix<C64> {
        let mut u = DMatrix::from_element(ham.dim, ham.dim, ZERO);
        for (s, e) in ham.sectors.iter().zip(&self.sectors) {
            let d = DMatrix::from_diagonal(&e.phases);
            let us = &e.vectors * d * e.vectors.adjoint();
            for (a, &i) in s.indices.iter().enumerate() {
                for (b, &j) in s.indices.iter().enumerate() {
                    u[(i, j)] = us[(a, b)];
                }
            }
        }
        u
    }

    /// Exact derivative kernels of this step with respect to Re ε and Im ε.
    ///
    /// In the eigenbasis of `H`, `∂U = V (F ∘ V†∂H V) V†` with the divided
    /// differences `F_ab = (f(λ_a) − f(λ_b))/(λ_a − λ_b)` of
    /// `f(λ) = e^{−iλτ}`.
    pub fn gradient_kernel(&self, ham: &ControlledHamiltonian) -> StepGradient {
        let tau = self.tau;
        let sectors = ham
            .sectors
            .iter()
            .zip(&self.sectors)
            .map(|(s, e)| {
                let v = &e.vectors;
                // ∂H/∂Re ε = −(μ₊ + μ₋),  ∂H/∂Im ε = −i(μ₊ − μ₋)
                let dh_re = -(&s.raise + &s.lower);
                let dh_im = (&s.raise - &s.lower) * C64::new(0.0, -1.0);
                let g_re = v.adjoint() * dh_re * v;
                let g_im = v.adjoint() * dh_im * v;
                let n = e.values.len();
                let f = DMatrix::from_fn(n, n, |a, b| divided_difference(e.values[a], e.values[b], tau));
                KernelBlock { re: g_re.component_mul(&f), im: g_im.component_mul(&f) }
            })
            .collect();
        StepGradient { sectors }
    }
}

/// `(e^{−iaτ} − e^{−ibτ})/(a − b)`, evaluated stably for close `a`, `b`.
fn divided_difference(a: f64, b: f64, tau: f64) -> C64 {
    let mean = 0.5 * (a + b);
    let half = 0.5 * tau * (a - b);
    let sinc = if half.abs() < 1e-4 {
        1.0 - half * half / 6.0
    } else {
        half.sin() / half
    };
    C64::from_polar(1.0, -tau * mean) * C64::new(0.0, -tau * sinc)
}

#[derive(Clone, Debug)]
struct KernelBlock {
    re: DMatrix<C64>,
    im: DMatrix<C64>,
}

/// Derivative kernels for one step, see [`StepDecomposition::gradient_kernel`].
#[derive(Clone, Debug)]
pub struct StepGradient {
    sectors: Vec<KernelBlock>,
}

impl StepGradient {
    /// `⟨χ|∂U|ψ⟩` for both field quadratures.
    pub fn overlaps(
        &self,
        ham: &ControlledHamiltonian,
        dec: &StepDecomposition,
        chi: &DVector<C64>,
        psi: &DVector<C64>,
    ) -> StepOverlaps {
        let mut d_re = ZERO;
        let mut d_im = ZERO;
        for ((s, e), k) in ham.sectors.iter().zip(&dec.sectors).zip(&self.sectors) {
            let a = e.vectors.ad_mul(&s.gather(psi));
            let b = e.vectors.ad_mul(&s.gather(chi));
            d_re += b.dotc(&(&k.re * &a));
            d_im += b.dotc(&(&k.im * &a));
        }
        StepOverlaps { d_re, d_im }
    }
}

/// Forward propagation of `psi0`; the returned trajectory holds `M + 1`
/// states `ψ(t_0) … ψ(T)`.
pub fn propagate_forward<'a>(
    ham: &'a ControlledHamiltonian,
    psi0: &StateVector,
    field: &ControlField,
    storage: TrajectoryStorage,
) -> Result<Trajectory<'a>> {
    check_state(ham, psi0)?;
    Trajectory::forward(ham, psi0, field, storage)
}

/// Backward propagation from `chi_t` at the final time, applying `U_k†`
/// from `T` down to `0`. The result is indexed by time step like a forward
/// trajectory (`state(0)` is `χ(0)`, `state(M)` is `χ(T)`).
pub fn propagate_backward<'a>(
    ham: &'a ControlledHamiltonian,
    chi_t: &StateVector,
    field: &ControlField,
    storage: TrajectoryStorage,
) -> Result<Trajectory<'a>> {
    check_state(ham, chi_t)?;
    Trajectory::backward(ham, chi_t, field, storage)
}

/// Final states only, one decomposition per step shared by all members.
pub fn propagate_final(
    ham: &ControlledHamiltonian,
    states: &[StateVector],
    field: &ControlField,
) -> Result<Vec<StateVector>> {
    for s in states {
        check_state(ham, s)?;
    }
    let mut cur: Vec<DVector<C64>> = states.iter().map(|s| s.amplitudes.clone()).collect();
    for &eps in field.samples() {
        let dec = ham.decompose(eps, field.dt());
        step_all(ham, &dec, &mut cur, false);
    }
    Ok(cur
        .into_iter()
        .zip(states)
        .map(|(a, s)| StateVector::new(a, s.weight))
        .collect())
}

/// Elementwise [`propagate_forward`]; output order follows input order.
pub fn propagate_ensemble<'a>(
    ham: &'a ControlledHamiltonian,
    states: &[StateVector],
    field: &ControlField,
    storage: TrajectoryStorage,
) -> Result<Vec<Trajectory<'a>>> {
    states
        .par_iter()
        .map(|s| propagate_forward(ham, s, field, storage))
        .collect()
}

pub(crate) fn step_all(ham: &ControlledHamiltonian, dec: &StepDecomposition, vs: &mut [DVector<C64>], adjoint: bool) {
    let work = vs.len() * ham.dim;
    let f = |v: &mut DVector<C64>| *v = dec.apply_with(ham, v, adjoint);
    if work >= 4096 {
        vs.par_iter_mut().for_each(f);
    } else {
        vs.iter_mut().for_each(f);
    }
}

fn check_state(ham: &ControlledHamiltonian, s: &StateVector) -> Result<()> {
    if s.dim() != ham.dim {
        return Err(Error::DimensionMismatch { expected: ham.dim, got: s.dim() });
    }
    Ok(())
}
