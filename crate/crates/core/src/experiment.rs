//! Experiment orchestration: configuration, single runs and L × seed sweeps.
//!
//! A run builds a random-phase ensemble, optimizes a field on it, validates
//! the field on every thermally occupied ground level, turns the field into
//! a cycle map and reports on the map's steady state.
//!
//! Output files (all CSV with a header row):
//!
//! | file | columns |
//! |---|---|
//! | `runs.csv` | `L,seed,status,iterations,stop_reason,fitness,infidelity,n_effort,purity,entropy,t_eff,delta_s_eff,leaked_probability,lambda2` |
//! | `effort.csv` | `L,seed,status,iterations,n_effort` |
//! | `infidelity.csv` | `L,seed,status,infidelity` |
//! | `entropy.csv` | `L,seed,status,entropy,delta_s_eff` |
//! | `std.csv` | `n,runs,mean_fitness,std` (over seeds per `L`, `n = L`) |
//! | `extrapolation.csv` | `status,threshold,a,b,crossing` (fit of median infidelity vs `L`) |
//!
//! Each run directory `L<L>_seed<seed>/` holds `krotov.csv`, `field.csv`,
//! `ensemble.csv` (+ `.json`), `cycle_map.csv`, `steady_state.csv` and
//! `report.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_dipole_matrix, build_h0, thermal_populations, BasisState, MolecularParams, RotorBasis};
use crate::dissipation::{steady_state, CycleMap, CycleModel, SteadyState};
use crate::krotov::{build_target_operator, optimize, KrotovConfig, KrotovRun, TargetOperator, TargetSpec};
use crate::metrics::{fit_exponential_extrapolate, numerical_effort, sample_std, vn_entropy, CoolingReport};
use crate::propagation::{ControlField, ControlledHamiltonian};
pub use crate::report::{emit_csv, Cell};
use crate::typicality::{build_ensemble_for, ground_weights, full_space_validation, WeightMode};
use crate::{Error, Result, C64};

/// Envelope of the initial guess field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuessShape {
    Constant,
    /// `sin²(π t / T)`, vanishing at both ends.
    #[default]
    Sin2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PulseConfig {
    /// Pulse duration, ps.
    pub duration: f64,
    /// Requested step, ps; adjusted down so the grid divides `duration`.
    pub dt: f64,
    /// Real part of the guess amplitude, cm⁻¹.
    pub guess_re: f64,
    /// Imaginary part of the guess amplitude, cm⁻¹.
    pub guess_im: f64,
    pub guess_shape: GuessShape,
    /// Carrier offset from the rotating frame, cm⁻¹.
    pub guess_detuning: f64,
    /// Use this field file as the guess (pilot field); overrides the shape.
    pub guess_file: Option<PathBuf>,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            duration: 20.0,
            dt: 0.05,
            guess_re: 0.5,
            guess_im: 0.0,
            guess_shape: GuessShape::Sin2,
            guess_detuning: 0.0,
            guess_file: None,
        }
    }
}

impl PulseConfig {
    pub fn n_steps(&self) -> usize {
        (self.duration / self.dt).ceil().max(1.0) as usize
    }

    pub fn guess_field(&self) -> Result<ControlField> {
        if let Some(path) = &self.guess_file {
            return ControlField::read_any(path);
        }
        if !(self.duration > 0.0 && self.dt > 0.0) {
            return Err(Error::Config(format!("pulse duration and dt must be positive, got {} and {}", self.duration, self.dt)));
        }
        let n = self.n_steps();
        let dt = self.duration / n as f64;
        let amp = C64::new(self.guess_re, self.guess_im);
        let total = self.duration;
        let detuning = self.guess_detuning / crate::units::HBAR;
        let shape = self.guess_shape;
        ControlField::from_fn(n, dt, |t| {
            let env = match shape {
                GuessShape::Constant => 1.0,
                GuessShape::Sin2 => (std::f64::consts::PI * t / total).sin().powi(2),
            };
            amp * env * C64::from_polar(1.0, -detuning * t)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrotovSettings {
    pub alpha: f64,
    pub max_iters: usize,
    pub fitness_target: f64,
    pub alpha_decay: f64,
    pub snapshot_every: usize,
    pub cache_budget_mb: usize,
}

impl Default for KrotovSettings {
    fn default() -> Self {
        Self { alpha: 1.0, max_iters: 500, fitness_target: 0.99, alpha_decay: 1.0, snapshot_every: 0, cache_budget_mb: 512 }
    }
}

impl KrotovSettings {
    pub fn to_config(&self, guess: ControlField) -> KrotovConfig {
        let mut c = KrotovConfig::new(self.alpha, self.max_iters, self.fitness_target, guess);
        c.alpha_decay = self.alpha_decay;
        c.snapshot_every = self.snapshot_every;
        c.cache_budget_bytes = self.cache_budget_mb << 20;
        c
    }
}

/// Full experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub molecule: MolecularParams,
    pub pulse: PulseConfig,
    pub krotov: KrotovSettings,
    pub target: TargetSpec,
    pub l_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub weight_mode: WeightMode,
    pub output_dir: PathBuf,
    /// Fitness threshold for the infidelity extrapolation, as an infidelity.
    pub extrapolation_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            molecule: MolecularParams::default().with_j_max(3),
            pulse: PulseConfig::default(),
            krotov: KrotovSettings::default(),
            target: TargetSpec::default(),
            l_list: vec![1, 2, 4, 8],
            seeds: vec![1, 2, 3, 4, 5],
            weight_mode: WeightMode::Thermal,
            output_dir: PathBuf::from("out"),
            extrapolation_threshold: 0.01,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => Error::Config(format!("{}: {other}", path.display())),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.molecule.validate().map_err(wrap)?;
        if self.l_list.is_empty() || self.l_list.contains(&0) {
            return Err(Error::Config("l_list must be nonempty with entries >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.pulse.guess_file.is_none() && !(self.pulse.duration > 0.0 && self.pulse.dt > 0.0) {
            return Err(Error::Config("pulse duration and dt must be positive".into()));
        }
        if !(self.extrapolation_threshold > 0.0) {
            return Err(Error::Config("extrapolation_threshold must be positive".into()));
        }
        self.krotov.to_config(ControlField::zeros(1, 1.0).expect("valid")).validate().map_err(wrap)
    }
}

/// Everything derived from the molecule and target.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: MolecularParams,
    pub cycle: CycleModel,
    pub target: TargetOperator,
    /// Thermal ground populations at the configured temperature.
    pub initial: Vec<f64>,
}

impl Model {
    pub fn new(params: &MolecularParams, target: &TargetSpec) -> Result<Self> {
        let basis = RotorBasis::new(params)?;
        let ham = ControlledHamiltonian::new(build_h0(&basis, params), build_dipole_matrix(&basis, params), basis.n_ground())?;
        let target = build_target_operator(target, &basis)?;
        let cycle = CycleModel::new(basis, ham, params)?;
        Ok(Self { params: params.clone(), cycle, target, initial: thermal_populations(params)? })
    }

    pub fn basis(&self) -> &RotorBasis {
        &self.cycle.basis
    }

    pub fn hamiltonian(&self) -> &ControlledHamiltonian {
        &self.cycle.hamiltonian
    }

    /// Full-space infidelity of `field` against the thermal weights.
    pub fn validate_field(&self, field: &ControlField) -> Result<f64> {
        full_space_validation(self.hamiltonian(), field, &self.target, &self.initial)
    }

    /// Cycle map, its steady state and the cooling report for `field`.
    pub fn steady_state(&self, field: &ControlField) -> Result<(CycleMap, SteadyState, CoolingReport)> {
        let map = self.cycle.cycle_map(field)?;
        let ss = steady_state(&map)?;
        let report = CoolingReport::from_populations(&ss.distribution, map.leaked_for(&ss.distribution), &self.params)?;
        Ok((map, ss, report))
    }
}

/// Artifacts of one `(L, seed)` run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub l: usize,
    pub seed: u64,
    pub field: ControlField,
    pub run: KrotovRun,
    pub infidelity: f64,
    pub steady: SteadyState,
    pub report: CoolingReport,
    pub n_effort: f64,
}

pub fn run_dir(out: &Path, l: usize, seed: u64) -> PathBuf {
    out.join(format!("L{l}_seed{seed}"))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Ensemble → optimize → full-space validation → cycle map → steady state →
/// metrics. Artifacts go to `run_dir(config.output_dir, l, seed)`.
pub fn run_single(config: &ExperimentConfig, l: usize, seed: u64) -> Result<RunOutcome> {
    let model = Model::new(&config.molecule, &config.target)?;
    run_with_model(&model, config, l, seed, Some(&config.output_dir))
}

/// [`run_single`] on a prebuilt model; `out = None` writes nothing.
pub fn run_with_model(model: &Model, config: &ExperimentConfig, l: usize, seed: u64, out: Option<&Path>) -> Result<RunOutcome> {
    let wrap = |e: Error| Error::Run { l, seed, source: Box::new(e) };
    let inner = || -> Result<RunOutcome> {
        let dim = model.basis().len();
        let ensemble = build_ensemble_for(l, config.weight_mode, &model.params, dim, seed)?;
        let guess = config.pulse.guess_field()?;
        let kcfg = config.krotov.to_config(guess);
        let (field, run) = optimize(model.hamiltonian(), &ensemble.members, &model.target, &kcfg)?;
        let infidelity = model.validate_field(&field)?;
        let (map, steady, report) = model.steady_state(&field)?;
        let n_effort = numerical_effort(run.iterations().max(1) as u64, l as u64);
        info!(
            "L={l} seed={seed}: {} iterations ({}), fitness {:.6}, full-space infidelity {:.6}, S_fs {:.6}",
            run.iterations(),
            run.stop_reason,
            run.final_fitness(),
            infidelity,
            report.entropy
        );
        if let Some(out) = out {
            let dir = run_dir(out, l, seed);
            create_dir(&dir)?;
            run.write_csv(&dir.join("krotov.csv"))?;
            field.write_csv(&dir.join("field.csv"))?;
            ensemble.write(&dir.join("ensemble.csv"))?;
            map.write_csv(&dir.join("cycle_map.csv"), model.basis())?;
            write_distribution(&dir.join("steady_state.csv"), model.basis(), &model.initial, &steady.distribution)?;
            let mut header = vec!["L", "seed", "iterations", "stop_reason", "fitness", "infidelity", "n_effort", "lambda2"];
            header.extend(CoolingReport::HEADER);
            let mut row = vec![
                Cell::from(l),
                Cell::from(seed),
                Cell::from(run.iterations()),
                Cell::from(run.stop_reason.to_string()),
                Cell::from(run.final_fitness()),
                Cell::from(infidelity),
                Cell::from(n_effort),
                Cell::from(steady.lambda2),
            ];
            row.extend(report.cells());
            emit_csv(&dir.join("report.csv"), &header, &[row])?;
        }
        Ok(RunOutcome { l, seed, field, run, infidelity, steady, report, n_effort })
    };
    inner().map_err(wrap)
}

fn write_distribution(path: &Path, basis: &RotorBasis, initial: &[f64], steady: &[f64]) -> Result<()> {
    let rows: Vec<Vec<Cell>> = basis
        .ground_states()
        .iter()
        .zip(initial.iter().zip(steady))
        .map(|(s, (a, b))| vec![Cell::from(BasisState::label(s)), Cell::from(*a), Cell::from(*b)])
        .collect();
    emit_csv(path, &["level", "initial", "steady_state"], &rows)
}

/// Result of a sweep; failed runs keep their error message.
#[derive(Debug)]
pub struct SweepSummary {
    pub results: Vec<(usize, u64, std::result::Result<RunOutcome, String>)>,
    pub extrapolation: std::result::Result<crate::metrics::ExponentialFit, String>,
}

impl SweepSummary {
    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| r.2.is_err()).count()
    }

    /// Median over seeds of `f` per `L`, successful runs only.
    pub fn median_by_l(&self, f: impl Fn(&RunOutcome) -> f64) -> BTreeMap<usize, f64> {
        let mut by_l: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (l, _, r) in &self.results {
            if let Ok(o) = r {
                by_l.entry(*l).or_default().push(f(o));
            }
        }
        by_l.into_iter().map(|(l, v)| (l, median(v))).collect()
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Every `(L, seed)` in `l_list × seeds`; failures are recorded, not fatal.
/// Summary CSVs go to `config.output_dir` when `write` is set.
pub fn sweep(config: &ExperimentConfig, write: bool) -> Result<SweepSummary> {
    let model = Model::new(&config.molecule, &config.target)?;
    let out = config.output_dir.as_path();
    if write {
        create_dir(out)?;
    }
    let jobs: Vec<(usize, u64)> = config.l_list.iter().flat_map(|&l| config.seeds.iter().map(move |&s| (l, s))).collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(l, seed)| {
            let r = run_with_model(&model, config, l, seed, write.then_some(out));
            if let Err(e) = &r {
                warn!("{e}");
            }
            (l, seed, r.map_err(|e| error_chain(&e)))
        })
        .collect();

    let mut summary = SweepSummary { results, extrapolation: Err(String::new()) };
    let medians = summary.median_by_l(|o| o.infidelity);
    let points: Vec<(f64, f64)> = medians.iter().map(|(&l, &y)| (l as f64, y)).collect();
    summary.extrapolation = fit_exponential_extrapolate(&points, config.extrapolation_threshold).map_err(|e| e.to_string());
    if write {
        write_sweep(&summary, config)?;
    }
    Ok(summary)
}

/// `e`, then each `source` in turn, joined by `: `.
pub fn error_chain(e: &(dyn std::error::Error + 'static)) -> String {
    let mut s = e.to_string();
    let mut cur = e.source();
    while let Some(inner) = cur {
        s.push_str(": ");
        s.push_str(&inner.to_string());
        cur = inner.source();
    }
    s
}

fn write_sweep(summary: &SweepSummary, config: &ExperimentConfig) -> Result<()> {
    let out = &config.output_dir;
    let nan = Cell::from(f64::NAN);
    let status = |r: &std::result::Result<RunOutcome, String>| match r {
        Ok(_) => Cell::from("ok"),
        Err(e) => Cell::from(format!("failed: {e}")),
    };
    let mut runs = Vec::new();
    let mut effort = Vec::new();
    let mut infid = Vec::new();
    let mut entropy = Vec::new();
    for (l, seed, r) in &summary.results {
        let key = [Cell::from(*l), Cell::from(*seed), status(r)];
        match r {
            Ok(o) => {
                let mut row = key.to_vec();
                row.extend([
                    Cell::from(o.run.iterations()),
                    Cell::from(o.run.stop_reason.to_string()),
                    Cell::from(o.run.final_fitness()),
                    Cell::from(o.infidelity),
                    Cell::from(o.n_effort),
                ]);
                row.extend(o.report.cells());
                row.push(Cell::from(o.steady.lambda2));
                runs.push(row);
                effort.push([key.to_vec(), vec![Cell::from(o.run.iterations()), Cell::from(o.n_effort)]].concat());
                infid.push([key.to_vec(), vec![Cell::from(o.infidelity)]].concat());
                entropy.push([key.to_vec(), vec![Cell::from(o.report.entropy), Cell::from(o.report.delta_s_eff)]].concat());
            }
            Err(_) => {
                let mut row = key.to_vec();
                row.extend([Cell::from(0usize), Cell::from("")]);
                row.extend(std::iter::repeat_n(nan.clone(), 3 + CoolingReport::HEADER.len() + 1));
                runs.push(row);
                effort.push([key.to_vec(), vec![Cell::from(0usize), nan.clone()]].concat());
                infid.push([key.to_vec(), vec![nan.clone()]].concat());
                entropy.push([key.to_vec(), vec![nan.clone(), nan.clone()]].concat());
            }
        }
    }
    let mut runs_header = vec!["L", "seed", "status", "iterations", "stop_reason", "fitness", "infidelity", "n_effort"];
    runs_header.extend(CoolingReport::HEADER);
    runs_header.push("lambda2");
    emit_csv(&out.join("runs.csv"), &runs_header, &runs)?;
    emit_csv(&out.join("effort.csv"), &["L", "seed", "status", "iterations", "n_effort"], &effort)?;
    emit_csv(&out.join("infidelity.csv"), &["L", "seed", "status", "infidelity"], &infid)?;
    emit_csv(&out.join("entropy.csv"), &["L", "seed", "status", "entropy", "delta_s_eff"], &entropy)?;

    let mut by_l: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (l, _, r) in &summary.results {
        if let Ok(o) = r {
            by_l.entry(*l).or_default().push(1.0 - o.infidelity);
        }
    }
    let std_rows: Vec<Vec<Cell>> = by_l
        .iter()
        .map(|(&l, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            vec![Cell::from(l), Cell::from(v.len()), Cell::from(mean), Cell::from(sample_std(v).unwrap_or(f64::NAN))]
        })
        .collect();
    emit_csv(&out.join("std.csv"), &["n", "runs", "mean_fitness", "std"], &std_rows)?;

    let thr = config.extrapolation_threshold;
    let row = match &summary.extrapolation {
        Ok(fit) if fit.converging => vec![
            Cell::from("ok"),
            Cell::from(thr),
            Cell::from(fit.a),
            Cell::from(fit.b),
            Cell::from(fit.crossing.unwrap_or(f64::NAN)),
        ],
        Ok(fit) => vec![Cell::from("no convergence trend"), Cell::from(thr), Cell::from(fit.a), Cell::from(fit.b), nan.clone()],
        Err(e) => vec![Cell::from(format!("failed: {e}")), Cell::from(thr), nan.clone(), nan.clone(), nan],
    };
    emit_csv(&out.join("extrapolation.csv"), &["status", "threshold", "a", "b", "crossing"], &[row])
}

/// Entropy of the thermal initial state on the configured ground manifold.
pub fn initial_entropy(params: &MolecularParams) -> Result<f64> {
    vn_entropy(&ground_weights(WeightMode::Thermal, params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(out: &Path) -> ExperimentConfig {
        ExperimentConfig {
            molecule: MolecularParams { temperature: 5.0, ..MolecularParams::default().with_j_max(2) },
            pulse: PulseConfig { duration: 5.0, dt: 0.1, ..PulseConfig::default() },
            krotov: KrotovSettings { alpha: 2.0, max_iters: 8, ..KrotovSettings::default() },
            l_list: vec![1],
            seeds: vec![3],
            output_dir: out.to_path_buf(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn default_config_roundtrips_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn bad_configs_are_config_errors() {
        for text in ["l_list = []", "unknown_key = 1", "[molecule]\ntemperature = -3.0", "[krotov]\nalpha = 0.0", "seeds = \"x\""] {
            assert!(matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn guess_grid_covers_duration() {
        let p = PulseConfig { duration: 1.0, dt: 0.3, ..PulseConfig::default() };
        let f = p.guess_field().unwrap();
        assert_eq!(f.len(), 4);
        assert!((f.duration() - 1.0).abs() < 1e-15);
        let c = PulseConfig { guess_shape: GuessShape::Constant, guess_re: 0.2, guess_im: 0.1, ..p };
        assert!(c.guess_field().unwrap().samples().iter().all(|s| (s - C64::new(0.2, 0.1)).norm() < 1e-15));
    }

    #[test]
    fn toy_run_emits_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let o = run_single(&cfg, 1, 3).unwrap();
        for w in o.run.fitness.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
        let rd = run_dir(dir.path(), 1, 3);
        for f in ["krotov.csv", "field.csv", "ensemble.csv", "ensemble.json", "cycle_map.csv", "steady_state.csv", "report.csv"] {
            assert!(rd.join(f).exists(), "{f}");
        }
        let back = ControlField::read_csv(&rd.join("field.csv")).unwrap();
        assert_eq!(back, o.field);
    }

    #[test]
    fn sweep_matches_single_run_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = toy_config(dir.path());
        let single = run_with_model(&Model::new(&cfg.molecule, &cfg.target).unwrap(), &cfg, 1, 3, None).unwrap();
        let s = sweep(&cfg, true).unwrap();
        assert_eq!(s.failures(), 0);
        let o = s.results[0].2.as_ref().unwrap();
        assert_eq!(o.run.fitness, single.run.fitness);
        assert_eq!(o.infidelity, single.infidelity);
        let first = fs::read(dir.path().join("runs.csv")).unwrap();
        sweep(&cfg, true).unwrap();
        assert_eq!(first, fs::read(dir.path().join("runs.csv")).unwrap());
        for f in ["effort.csv", "infidelity.csv", "entropy.csv", "std.csv", "extrapolation.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }

    #[test]
    fn failed_runs_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_config(dir.path());
        cfg.pulse.guess_file = Some(dir.path().join("missing.csv"));
        let s = sweep(&cfg, true).unwrap();
        assert_eq!(s.failures(), 1);
        let text = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("failed"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(vec![]).is_nan());
    }
}
