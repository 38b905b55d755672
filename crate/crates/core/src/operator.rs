use nalgebra::DMatrix;

use crate::{Error, Result, C64};

/// Structural tag carried alongside a dense operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Hermitian,
    Unitary,
    General,
}

pub const HERMITIAN_TOL: f64 = 1e-12;
pub const UNITARY_TOL: f64 = 1e-10;

/// Dense complex square matrix over the canonical basis.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix {
    matrix: DMatrix<C64>,
    kind: OperatorKind,
}

impl OperatorMatrix {
    /// Wraps `matrix`, checking the invariant that `kind` promises.
    pub fn new(matrix: DMatrix<C64>, kind: OperatorKind) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch { expected: matrix.nrows(), got: matrix.ncols() });
        }
        match kind {
            OperatorKind::Hermitian => {
                let dev = hermiticity_deviation(&matrix);
                if dev > HERMITIAN_TOL {
                    return Err(Error::NotHermitian(dev));
                }
            }
            OperatorKind::Unitary => {
                let dev = unitarity_deviation(&matrix);
                if dev > UNITARY_TOL {
                    return Err(Error::InvalidField(format!("operator not unitary (deviation {dev:.3e})")));
                }
            }
            OperatorKind::General => {}
        }
        Ok(Self { matrix, kind })
    }

    pub fn hermitian_from_real_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let matrix = DMatrix::from_fn(n, n, |i, j| if i == j { C64::new(diag[i], 0.0) } else { C64::new(0.0, 0.0) });
        Self { matrix, kind: OperatorKind::Hermitian }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.matrix[(row, col)]
    }

    /// Re-checks Hermiticity regardless of the tag.
    pub fn ensure_hermitian(&self) -> Result<()> {
        let dev = hermiticity_deviation(&self.matrix);
        if dev > HERMITIAN_TOL {
            Err(Error::NotHermitian(dev))
        } else {
            Ok(())
        }
    }
}

/// max |A - A†| over all entries.
pub fn hermiticity_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (m[(i, j)] - m[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// max |U†U - I| over all entries.
pub fn unitarity_deviation(u: &DMatrix<C64>) -> f64 {
    let prod = u.adjoint() * u;
    let n = prod.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}
