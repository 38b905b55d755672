//! Cooling and convergence diagnostics on ground-manifold populations.
//!
//! Entropies are in nats.

use crate::basis::{thermal_distribution, MolecularParams};
use crate::report::Cell;
use crate::{Error, Result};

/// Entries below this are rejected as negative populations.
pub const NEGATIVE_TOL: f64 = 1e-12;

/// Relative bisection tolerance on the effective temperature.
pub const T_EFF_RTOL: f64 = 1e-6;

/// `Σ p²`.
pub fn purity(populations: &[f64]) -> f64 {
    populations.iter().map(|p| p * p).sum()
}

/// `−Σ p ln p`, with `0 ln 0 = 0`.
pub fn vn_entropy(populations: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for &p in populations {
        if p < -NEGATIVE_TOL {
            return Err(Error::NegativePopulation(p));
        }
        if p > 0.0 {
            s -= p * p.ln();
        }
    }
    Ok(s.max(0.0))
}

/// Entropy of the thermal state at `temperature` on ground levels `J ≤ j_max`.
pub fn thermal_entropy(b_g: f64, j_max: i32, temperature: f64) -> Result<f64> {
    vn_entropy(&thermal_distribution(b_g, j_max, temperature)?)
}

/// Temperature of the thermal state on the same truncated ground manifold
/// (`J ≤ params.j_max_g`) with the same entropy as `populations`.
///
/// A zero-entropy distribution gives 0 K.
pub fn effective_temperature(populations: &[f64], params: &MolecularParams) -> Result<f64> {
    let s = vn_entropy(populations)?;
    let j_max = params.j_max_g;
    let dim = ((j_max + 1) * (j_max + 1)) as f64;
    let max = dim.ln();
    if s >= max * (1.0 - 1e-12) {
        return Err(Error::HotterThanInfinite { entropy: s, max });
    }
    if s <= 0.0 {
        return Ok(0.0);
    }
    let s_at = |t: f64| thermal_entropy(params.b_g, j_max, t);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while s_at(hi)? < s {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::HotterThanInfinite { entropy: s, max });
        }
    }
    while hi - lo > T_EFF_RTOL * 1e-3 * hi {
        let mid = 0.5 * (lo + hi);
        if s_at(mid)? < s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Reference entropies for the normalized entropy decrease: the initial
/// thermal state on `J ≤ j_max_g` and the thermal state at the same
/// temperature on `J ≤ j_max_g − 1`.
pub fn reference_entropies(params: &MolecularParams) -> Result<(f64, f64)> {
    if params.j_max_g < 1 {
        return Err(Error::ZeroDenominator("reference manifold J ≤ j_max_g − 1 needs j_max_g ≥ 1"));
    }
    let s_init = thermal_entropy(params.b_g, params.j_max_g, params.temperature)?;
    let s_th = thermal_entropy(params.b_g, params.j_max_g - 1, params.temperature)?;
    Ok((s_init, s_th))
}

/// `(S_fs − S_init) / (S_Th − S_init)`; 0 for no change, 1 when the final
/// entropy equals that of the thermal state with the top level removed.
pub fn delta_s_eff(s_fs: f64, params: &MolecularParams) -> Result<f64> {
    let (s_init, s_th) = reference_entropies(params)?;
    let den = s_th - s_init;
    if den == 0.0 {
        return Err(Error::ZeroDenominator("S_Th − S_init"));
    }
    Ok((s_fs - s_init) / den)
}

/// `ln(n_iters · m_rp)`.
pub fn numerical_effort(n_iters: u64, m_rp: u64) -> f64 {
    ((n_iters as f64) * (m_rp as f64)).ln()
}

/// Relative standard deviation `√(⟨x²⟩ − ⟨x⟩²) / |⟨x⟩|` with the population
/// variance.
pub fn sample_std(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidParams("sample_std of an empty list".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::ZeroDenominator("mean"));
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(var.sqrt() / mean.abs())
}

/// Result of fitting `y = a·e^{−bL}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExponentialFit {
    pub a: f64,
    pub b: f64,
    /// `ln y_i − (ln a − b L_i)` per input point.
    pub residuals: Vec<f64>,
    /// `L` where the fit crosses the threshold; `None` without a decay trend.
    pub crossing: Option<f64>,
    /// False when `b ≤ 0` (no convergence trend).
    pub converging: bool,
}

/// Least-squares line through `(L, ln y)`; the crossing is
/// `ln(a / threshold) / b`.
pub fn fit_exponential_extrapolate(points: &[(f64, f64)], threshold: f64) -> Result<ExponentialFit> {
    if points.len() < 3 {
        return Err(Error::InvalidFit(format!("need at least 3 points, got {}", points.len())));
    }
    if !(threshold > 0.0) {
        return Err(Error::InvalidFit(format!("threshold must be positive, got {threshold}")));
    }
    if let Some(&(l, y)) = points.iter().find(|(_, y)| !(*y > 0.0)) {
        return Err(Error::InvalidFit(format!("non-positive infidelity {y} at L = {l}")));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidFit("all L values coincide".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1.ln() - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let a = intercept.exp();
    let b = -slope;
    let residuals = points.iter().map(|p| p.1.ln() - (intercept + slope * p.0)).collect();
    // slopes at rounding level count as flat
    let scale = points.iter().map(|p| p.1.ln().abs()).fold(1.0, f64::max) / sxx.sqrt();
    let converging = b > 1e-12 * scale;
    let crossing = converging.then(|| (a / threshold).ln() / b);
    Ok(ExponentialFit { a, b, residuals, crossing, converging })
}

/// One row of cooling diagnostics for a steady state.
#[derive(Clone, Debug, PartialEq)]
pub struct CoolingReport {
    pub purity: f64,
    pub entropy: f64,
    /// Kelvin; `NaN` when the state is hotter than any thermal state.
    pub t_eff: f64,
    pub delta_s_eff: f64,
    /// Probability per cycle decaying above the basis truncation.
    pub leaked_probability: f64,
}

impl CoolingReport {
    pub const HEADER: [&'static str; 5] = ["purity", "entropy", "t_eff", "delta_s_eff", "leaked_probability"];

    pub fn from_populations(populations: &[f64], leaked: f64, params: &MolecularParams) -> Result<Self> {
        let entropy = vn_entropy(populations)?;
        let t_eff = match effective_temperature(populations, params) {
            Ok(t) => t,
            Err(Error::HotterThanInfinite { .. }) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(Self {
            purity: purity(populations),
            entropy,
            t_eff,
            delta_s_eff: delta_s_eff(entropy, params)?,
            leaked_probability: leaked,
        })
    }

    pub fn cells(&self) -> Vec<Cell> {
        [self.purity, self.entropy, self.t_eff, self.delta_s_eff, self.leaked_probability]
            .into_iter()
            .map(Cell::from)
            .collect()
    }
}
