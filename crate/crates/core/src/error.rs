use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid molecular parameters: {0}")]
    InvalidParams(String),

    #[error("nonphysical temperature: {0} K")]
    NonphysicalTemperature(f64),

    #[error("operator is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid control field: {0}")]
    InvalidField(String),

    #[error("dark excited state {0} has zero total decay rate")]
    DarkState(String),

    #[error("reducible cycle map: unit eigenvalue has multiplicity {multiplicity}")]
    ReducibleCycleMap {
        multiplicity: usize,
        /// Basis of the unit-eigenvalue eigenspace.
        vectors: Vec<Vec<f64>>,
    },

    #[error("empty allowed set for the target operator")]
    EmptyTarget,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("penalty weight alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),

    #[error("negative population {0:.3e} in distribution")]
    NegativePopulation(f64),

    #[error("hotter than infinite temperature on truncated basis (S = {entropy}, max = {max})")]
    HotterThanInfinite { entropy: f64, max: f64 },

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("invalid fit input: {0}")]
    InvalidFit(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("optimization failed at iteration {iteration}: {source}")]
    Optimization {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run L={l} seed={seed} failed: {source}")]
    Run {
        l: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}
