use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rydberg_w::config::{ConfigError, Experiment, ExperimentConfig};
use rydberg_w::effective::{write_matrix_csv, EffectiveModel};
use rydberg_w::experiments::{
    run_expt_table, run_fig3a, run_fig3b, run_fig3c, run_sweep, run_urp_sweep, steady_point, ExperimentError,
    RunOptions, SweepResult, SweepRow,
};
use rydberg_w::model::StateSpace;
use rydberg_w::operator::OperatorMatrix;
use rydberg_w::solvers::{SteadyMethod, SteadyOptions};

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "rydberg-w", version, about = "Steady states and dynamics of a dissipatively prepared three-atom W state")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Steady-state fidelity over (Δ, Ω).
    Fig3a(Common),
    /// Steady-state fidelity over (κ, γ_e).
    Fig3b(Common),
    /// Full versus effective fidelity against time.
    Fig3c(Common),
    /// Steady-state fidelity and purity against U_rp.
    UrpSweep(Common),
    /// The three experimental parameter sets.
    ExptTable(Common),
    /// A user-defined grid, or a single point when the grid is empty.
    Custom(Common),
    /// Write the effective Hamiltonian and jump operators as CSV files.
    DumpEffective {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long, default_value = "effective")]
        dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output CSV; overrides the config, stdout when neither is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    solver: Option<SteadyMethod>,
    #[arg(long)]
    tol: Option<f64>,
    /// Cavity Fock-space truncation.
    #[arg(long)]
    nc: Option<usize>,
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(e) => e.into(),
            other => Failure::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Solver(format!("cannot write output: {e}"))
    }
}

fn load(common: &Common, experiment: Experiment) -> Result<ExperimentConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let c = ExperimentConfig::load(path)?;
            if c.experiment != experiment {
                return Err(ConfigError::ExperimentMismatch {
                    expected: experiment,
                    found: c.experiment,
                }
                .into());
            }
            c
        }
        None => ExperimentConfig::default_for(experiment),
    };
    if let Some(method) = common.solver {
        config.solver.method = method;
    }
    if let Some(tol) = common.tol {
        config.solver.tol = tol;
    }
    if let Some(n_c) = common.nc {
        config.params.insert("n_c".into(), n_c as f64);
    }
    if let Some(out) = &common.out {
        config.output = Some(out.clone());
    }
    if !(config.solver.tol > 0.0 && config.solver.tol < 1.0) {
        return Err(Failure::Config(format!("tol = {} must lie in (0, 1)", config.solver.tol)));
    }
    config.validate()?;
    Ok(config)
}

fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), Failure> {
    match path {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path)?);
            write(&mut out)?;
            out.flush()?;
            log::info!("wrote {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = stdout.lock();
            write(&mut out)?;
        }
    }
    Ok(())
}

fn emit_sweep(result: &SweepResult) -> Result<(), Failure> {
    let failed = result.failures();
    if failed > 0 {
        log::warn!("{failed} of {} points failed", result.rows.len());
    }
    emit(result.config.output.as_deref(), |out| result.write_csv(out))
}

fn run(command: Command) -> Result<(), Failure> {
    let options = |c: &Common| RunOptions { workers: c.workers };
    match command {
        Command::Fig3a(c) => emit_sweep(&run_fig3a(&load(&c, Experiment::Fig3a)?, &options(&c))?),
        Command::Fig3b(c) => emit_sweep(&run_fig3b(&load(&c, Experiment::Fig3b)?, &options(&c))?),
        Command::UrpSweep(c) => emit_sweep(&run_urp_sweep(&load(&c, Experiment::UrpSweep)?, &options(&c))?),
        Command::ExptTable(c) => emit_sweep(&run_expt_table(&load(&c, Experiment::ExptTable)?, &options(&c))?),
        Command::Fig3c(c) => {
            let config = load(&c, Experiment::Fig3c)?;
            let result = run_fig3c(&config)?;
            emit(config.output.as_deref(), |out| result.write_csv(out))
        }
        Command::Custom(c) => {
            let config = load(&c, Experiment::Custom)?;
            if !config.grid.is_empty() {
                return emit_sweep(&run_sweep(&config, &options(&c))?);
            }
            let params = config.base_params()?;
            let solver = SteadyOptions {
                method: config.solver.method,
                tol: config.solver.tol,
                ..SteadyOptions::default()
            };
            let (fidelity, purity, residual) = steady_point(&params, config.model, &config.target, &solver)?;
            let result = SweepResult {
                config: config.clone(),
                columns: Vec::new(),
                rows: vec![SweepRow {
                    label: Some("custom".into()),
                    values: Vec::new(),
                    fidelity,
                    purity,
                    residual,
                    wall_time: Default::default(),
                    status: "ok".into(),
                }],
            };
            emit_sweep(&result)
        }
        Command::DumpEffective { common, dir } => {
            let config = load(&common, Experiment::Custom)?;
            let params = config.base_params()?;
            let model = EffectiveModel::derive(&params).map_err(|e| Failure::Solver(e.to_string()))?;
            let labels = StateSpace::Effective.labels();
            std::fs::create_dir_all(&dir)?;
            let write = |name: String, op: &OperatorMatrix| -> Result<(), Failure> {
                let path = dir.join(name);
                let out = BufWriter::new(File::create(&path)?);
                write_matrix_csv(op, &labels, out)?;
                Ok(())
            };
            write("h_eff.csv".into(), &model.h_eff())?;
            let jumps = model.zeno_lindblads.iter().chain(&model.rydberg_lindblads);
            for (k, op) in jumps.enumerate() {
                write(format!("l_{:02}.csv", k + 1), op)?;
            }
            log::info!("wrote effective operators to {}", dir.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    faer::set_global_parallelism(faer::Par::Seq);
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_SOLVER)
        }
    }
}
