//! `rotcool` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure,
//! 3 sweep finished with failed runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};
use rotcool::experiment::{emit_csv, error_chain, run_single, sweep, Cell, ExperimentConfig, Model};
use rotcool::metrics::CoolingReport;
use rotcool::propagation::ControlField;
use rotcool::Error;

#[derive(Parser, Debug)]
#[command(name = "rotcool", version, about = "Optimal-control laser cooling of molecular rotations")]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One optimization run for a single (L, seed).
    Run {
        /// Ensemble size; defaults to the first entry of `l_list`.
        #[arg(long = "l")]
        l: Option<usize>,
    },
    /// Every (L, seed) pair of the config plus the summary tables.
    Sweep,
    /// Cycle map, steady state and cooling report for a given field.
    SteadyState {
        #[arg(long)]
        field: PathBuf,
    },
    /// Full-space infidelity of a given field.
    ValidateField {
        #[arg(long)]
        field: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
    Partial(usize, usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Runtime(_) => 2,
            Failure::Partial(..) => 3,
        }
    }
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(error_chain(&e))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Config(error_chain(&e)))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(Error::io(dir, e)))
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Run { l } => {
            let l = l.unwrap_or(cfg.l_list[0]);
            if l == 0 {
                return Err(Failure::Config("--l must be at least 1".into()));
            }
            let seed = cfg.seeds[0];
            create_out(&cfg.output_dir)?;
            let o = run_single(&cfg, l, seed).map_err(runtime)?;
            println!(
                "L={l} seed={seed} iterations={} stop={} fitness={:.10} infidelity={:.10} entropy={:.10} delta_s_eff={:.10}",
                o.run.iterations(),
                o.run.stop_reason,
                o.run.final_fitness(),
                o.infidelity,
                o.report.entropy,
                o.report.delta_s_eff
            );
            Ok(())
        }
        Command::Sweep => {
            let s = sweep(&cfg, true).map_err(runtime)?;
            let total = s.results.len();
            let failed = s.failures();
            println!("sweep: {} of {total} runs succeeded; tables in {}", total - failed, cfg.output_dir.display());
            if failed > 0 {
                return Err(Failure::Partial(failed, total));
            }
            Ok(())
        }
        Command::SteadyState { field } => {
            let model = Model::new(&cfg.molecule, &cfg.target).map_err(|e| Failure::Config(error_chain(&e)))?;
            let field = ControlField::read_any(field).map_err(runtime)?;
            let (map, ss, report) = model.steady_state(&field).map_err(runtime)?;
            create_out(&cfg.output_dir)?;
            map.write_csv(&cfg.output_dir.join("cycle_map.csv"), model.basis()).map_err(runtime)?;
            let rows: Vec<Vec<Cell>> = model
                .basis()
                .ground_states()
                .iter()
                .zip(&ss.distribution)
                .map(|(s, p)| vec![Cell::from(s.label()), Cell::from(*p)])
                .collect();
            emit_csv(&cfg.output_dir.join("steady_state.csv"), &["level", "population"], &rows).map_err(runtime)?;
            let mut header = vec!["lambda2", "spectral_gap"];
            header.extend(CoolingReport::HEADER);
            let mut row = vec![Cell::from(ss.lambda2), Cell::from(ss.spectral_gap)];
            row.extend(report.cells());
            emit_csv(&cfg.output_dir.join("report.csv"), &header, &[row]).map_err(runtime)?;
            println!(
                "entropy={:.10} purity={:.10} t_eff={:.6} delta_s_eff={:.10} lambda2={:.10}",
                report.entropy, report.purity, report.t_eff, report.delta_s_eff, ss.lambda2
            );
            Ok(())
        }
        Command::ValidateField { field } => {
            let model = Model::new(&cfg.molecule, &cfg.target).map_err(|e| Failure::Config(error_chain(&e)))?;
            let field = ControlField::read_any(field).map_err(runtime)?;
            let infidelity = model.validate_field(&field).map_err(runtime)?;
            println!("infidelity={infidelity:.16e}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            error!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => {
            info!("done");
            ExitCode::SUCCESS
        }
        Err(f) => {
            match &f {
                Failure::Config(m) => error!("configuration error: {m}"),
                Failure::Runtime(m) => error!("{m}"),
                Failure::Partial(n, total) => error!("{n} of {total} runs failed; see runs.csv"),
            }
            ExitCode::from(f.code())
        }
    }
}
