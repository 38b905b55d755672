use nalgebra::DVector;

use super::{ControlField, ControlledHamiltonian, StateVector};
use crate::{Result, C64};

/// How a trajectory keeps its intermediate states.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryStorage {
    /// Every time point.
    Full,
    /// Every `interval`-th time point; the rest are recomputed on demand.
    Checkpointed { interval: usize },
    /// Full storage if it fits in `budget_bytes`, checkpoints otherwise.
    Auto { budget_bytes: usize },
}

impl TrajectoryStorage {
    fn interval(self, n_points: usize, dim: usize) -> usize {
        match self {
            TrajectoryStorage::Full => 1,
            TrajectoryStorage::Checkpointed { interval } => interval.max(1),
            TrajectoryStorage::Auto { budget_bytes } => {
                let bytes = n_points * dim * std::mem::size_of::<C64>();
                if bytes <= budget_bytes {
                    1
                } else {
                    bytes.div_ceil(budget_bytes.max(1)).max(2)
                }
            }
        }
    }
}

/// States at `t_0 … t_M` for one propagation.
///
/// Any point can be rebuilt by stepping forward from the checkpoint below it,
/// both for forward trajectories and for backward (costate) ones, since
/// `χ(t_{k+1}) = U_k χ(t_k)` holds either way.
#[derive(Clone, Debug)]
pub struct Trajectory<'a> {
    ham: &'a ControlledHamiltonian,
    field: ControlField,
    interval: usize,
    checkpoints: Vec<DVector<C64>>,
    last: DVector<C64>,
    weight: f64,
}

impl<'a> Trajectory<'a> {
    pub(super) fn forward(
        ham: &'a ControlledHamiltonian,
        psi0: &StateVector,
        field: &ControlField,
        storage: TrajectoryStorage,
    ) -> Result<Self> {
        let m = field.len();
        let interval = storage.interval(m + 1, ham.dim());
        let mut checkpoints = Vec::with_capacity(m / interval + 1);
        let mut cur = psi0.amplitudes.clone();
        for (k, &eps) in field.samples().iter().enumerate() {
            if k % interval == 0 {
                checkpoints.push(cur.clone());
            }
            cur = ham.decompose(eps, field.dt()).apply(ham, &cur);
        }
        if m.is_multiple_of(interval) {
            checkpoints.push(cur.clone());
        }
        Ok(Self { ham, field: field.clone(), interval, checkpoints, last: cur, weight: psi0.weight })
    }

    pub(super) fn backward(
        ham: &'a ControlledHamiltonian,
        chi_t: &StateVector,
        field: &ControlField,
        storage: TrajectoryStorage,
    ) -> Result<Self> {
        let m = field.len();
        let interval = storage.interval(m + 1, ham.dim());
        let n_checkpoints = m / interval + 1;
        let mut checkpoints = vec![DVector::zeros(0); n_checkpoints];
        let mut cur = chi_t.amplitudes.clone();
        if m.is_multiple_of(interval) {
            checkpoints[m / interval] = cur.clone();
        }
        for k in (0..m).rev() {
            cur = ham.decompose(field.samples()[k], field.dt()).apply_adjoint(ham, &cur);
            if k % interval == 0 {
                checkpoints[k / interval] = cur.clone();
            }
        }
        Ok(Self {
            ham,
            field: field.clone(),
            interval,
            checkpoints,
            last: chi_t.amplitudes.clone(),
            weight: chi_t.weight,
        })
    }

    /// Number of stored time points, `M + 1`.
    pub fn len(&self) -> usize {
        self.field.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn checkpoint_interval(&self) -> usize {
        self.interval
    }

    pub fn stored_points(&self) -> usize {
        self.checkpoints.len()
    }

    /// State at time index `k` (`0 ..= M`).
    pub fn state(&self, k: usize) -> DVector<C64> {
        assert!(k < self.len(), "time index {k} out of range");
        if k == self.field.len() {
            return self.last.clone();
        }
        let c = k / self.interval;
        let mut cur = self.checkpoints[c].clone();
        for step in (c * self.interval)..k {
            cur = self.ham.decompose(self.field.samples()[step], self.field.dt()).apply(self.ham, &cur);
        }
        cur
    }

    pub fn initial(&self) -> StateVector {
        StateVector::new(self.state(0), self.weight)
    }

    pub fn final_state(&self) -> StateVector {
        StateVector::new(self.last.clone(), self.weight)
    }

    /// All states in time order; checkpointed storage recomputes each
    /// segment once.
    pub fn states(&self) -> Vec<DVector<C64>> {
        let mut out = Vec::with_capacity(self.len());
        let mut cur = self.checkpoints[0].clone();
        for k in 0..self.field.len() {
            if k % self.interval == 0 {
                cur = self.checkpoints[k / self.interval].clone();
            }
            out.push(cur.clone());
            cur = self.ham.decompose(self.field.samples()[k], self.field.dt()).apply(self.ham, &cur);
        }
        out.push(self.last.clone());
        out
    }
}
