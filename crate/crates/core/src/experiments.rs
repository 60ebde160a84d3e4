//! Steady-state sweeps, the experimental parameter table and the
//! full-versus-effective trajectory comparison, with CSV output.

use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, ModelKind, Scale, Units};
use crate::effective::{build_effective_model, EffectiveError};
use crate::model::{build_full_model, LindbladModel, ModelError, StateSpace, SystemParams};
use crate::observables::{fidelity, purity, ObservableError, TargetState};
use crate::solvers::{evolve, steady_state, SolverError, SteadyOptions, TrajectoryResult};
use crate::state::DensityMatrix;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Effective(#[from] EffectiveError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Short tag recorded in the `status` column of failed sweep points.
    pub fn tag(&self) -> &'static str {
        match self {
            ExperimentError::Config(_) => "config-error",
            ExperimentError::Model(_) | ExperimentError::Effective(_) => "model-error",
            ExperimentError::Solver(_) => "solver-error",
            ExperimentError::Observable(_) => "observable-error",
            ExperimentError::Io(_) => "io-error",
        }
    }
}

/// Execution settings that never change results.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads for sweeps; `None` uses all cores.
    pub workers: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    /// Set name, for tables without a grid.
    pub label: Option<String>,
    /// Raw axis values, in axis order.
    pub values: Vec<f64>,
    pub fidelity: f64,
    pub purity: f64,
    pub residual: f64,
    pub wall_time: Duration,
    /// `ok` or an error tag.
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub config: ExperimentConfig,
    /// Axis column names.
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// The row whose axis values are closest to `values`.
    pub fn nearest(&self, values: &[f64]) -> Option<&SweepRow> {
        self.rows.iter().min_by(|a, b| {
            let d = |r: &SweepRow| -> f64 { r.values.iter().zip(values).map(|(x, y)| (x - y).abs()).sum() };
            d(a).total_cmp(&d(b))
        })
    }

    pub fn row(&self, label: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.label.as_deref() == Some(label))
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    /// Writes the CSV. Wall times are omitted so reruns are byte-identical.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(header_block(&self.config).as_bytes())?;
        let has_label = self.rows.iter().any(|r| r.label.is_some());
        let mut cols: Vec<&str> = Vec::new();
        if has_label {
            cols.push("set");
        }
        cols.extend(self.columns.iter().map(String::as_str));
        cols.extend(["fidelity", "purity", "residual", "status"]);
        writeln!(out, "{}", cols.join(","))?;
        for row in &self.rows {
            let mut fields: Vec<String> = Vec::new();
            if has_label {
                fields.push(row.label.clone().unwrap_or_default());
            }
            fields.extend(row.values.iter().map(|v| v.to_string()));
            fields.push(row.fidelity.to_string());
            fields.push(row.purity.to_string());
            fields.push(format!("{:e}", row.residual));
            fields.push(row.status.clone());
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

fn header_block(config: &ExperimentConfig) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "# rydberg-w {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(h, "# experiment: {}", config.experiment);
    let _ = writeln!(h, "# solver: {} tol={:e}", config.solver.method, config.solver.tol);
    let model = match config.model {
        ModelKind::Full => "full",
        ModelKind::Effective => "effective",
    };
    let _ = writeln!(h, "# model: {model} target: {}", config.target);
    let units = match config.units {
        Units::G => "g",
        Units::Mhz => "mhz",
    };
    let _ = writeln!(h, "# input units: {units}; all values below in units of g");
    let params_line = |h: &mut String, name: &str, p: &SystemParams| {
        let _ = writeln!(
            h,
            "# {name}: g={} omega={} omega_r={} delta={} u_rr={} u_rp={} gamma={} gamma_e={} kappa={} n_c={}",
            p.g, p.omega, p.omega_r, p.delta, p.u_rr(), p.u_rp, p.gamma, p.gamma_e, p.kappa, p.n_c
        );
    };
    if let Ok(base) = config.base_params() {
        if config.experiment == Experiment::ExptTable {
            for s in experimental_sets() {
                params_line(&mut h, s.name, &SystemParams { n_c: base.n_c, ..s.params });
            }
        } else {
            params_line(&mut h, "params", &base);
        }
    }
    for axis in &config.grid {
        let scale = match axis.scale {
            Scale::Linear => "linear",
            Scale::Log => "log",
        };
        let _ = write!(
            h,
            "# grid: {} in [{}, {}] x {} {}",
            axis.column(),
            axis.start,
            axis.stop,
            axis.points,
            scale
        );
        if !axis.include.is_empty() {
            let extra: Vec<String> = axis.include.iter().map(|v| v.to_string()).collect();
            let _ = write!(h, " plus {}", extra.join(" "));
        }
        h.push('\n');
    }
    for link in &config.links {
        let _ = writeln!(h, "# link: {} = {} * {}", link.name, link.factor, link.from);
    }
    if let Some(ev) = &config.evolution {
        let _ = writeln!(
            h,
            "# evolution: initial {} full to {} ({} records) effective to {} ({} records)",
            ev.initial, ev.t_full, ev.n_full, ev.t_effective, ev.n_effective
        );
    }
    h
}

/// Builds the model selected by `kind`.
pub fn build_model(params: &SystemParams, kind: ModelKind) -> Result<LindbladModel, ExperimentError> {
    Ok(match kind {
        ModelKind::Full => build_full_model(params)?,
        ModelKind::Effective => build_effective_model(params)?,
    })
}

fn steady_options(config: &ExperimentConfig) -> SteadyOptions {
    SteadyOptions {
        method: config.solver.method,
        tol: config.solver.tol,
        ..SteadyOptions::default()
    }
}

/// Steady-state fidelity and purity at a single parameter point.
pub fn steady_point(
    params: &SystemParams,
    kind: ModelKind,
    target: &str,
    options: &SteadyOptions,
) -> Result<(f64, f64, f64), ExperimentError> {
    let model = build_model(params, kind)?;
    let target = TargetState::named(&model.space, target)?;
    let ss = steady_state(&model, options)?;
    Ok((fidelity(&ss.rho_ss, &target)?, purity(&ss.rho_ss), ss.residual))
}

fn solve_row(label: Option<String>, values: Vec<f64>, params: Result<SystemParams, ConfigError>, config: &ExperimentConfig) -> SweepRow {
    let start = Instant::now();
    let outcome = params
        .map_err(ExperimentError::from)
        .and_then(|p| steady_point(&p, config.model, &config.target, &steady_options(config)));
    let wall_time = start.elapsed();
    match outcome {
        Ok((fidelity, purity, residual)) => {
            let name = label.as_deref().map(|l| format!("{l} ")).unwrap_or_default();
            log::info!("{name}{values:?}: F = {fidelity:.6}, P = {purity:.6} ({wall_time:.2?})");
            SweepRow {
                label,
                values,
                fidelity,
                purity,
                residual,
                wall_time,
                status: "ok".to_string(),
            }
        }
        Err(e) => {
            log::warn!("{label:?} {values:?}: {e}");
            SweepRow {
                label,
                values,
                fidelity: f64::NAN,
                purity: f64::NAN,
                residual: f64::NAN,
                wall_time,
                status: e.tag().to_string(),
            }
        }
    }
}

fn in_pool<T: Send>(options: &RunOptions, f: impl FnOnce() -> T + Send) -> T {
    match options.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(f),
            Err(e) => {
                log::warn!("cannot build a {n}-thread pool ({e}); using the global pool");
                f()
            }
        },
        None => f(),
    }
}

fn check_experiment(config: &ExperimentConfig, expected: Experiment) -> Result<(), ConfigError> {
    if config.experiment != expected {
        return Err(ConfigError::ExperimentMismatch {
            expected,
            found: config.experiment,
        });
    }
    config.validate()
}

/// Steady states over the configured grid. Rows come back in grid order
/// (last axis fastest) whatever the number of workers; a failing point
/// becomes a NaN row with an error tag.
pub fn run_sweep(config: &ExperimentConfig, options: &RunOptions) -> Result<SweepResult, ConfigError> {
    config.validate()?;
    let points = config.grid_points();
    let rows = in_pool(options, || {
        points
            .into_par_iter()
            .map(|values| {
                let params = config.params_at(&values);
                solve_row(None, values, params, config)
            })
            .collect()
    });
    Ok(SweepResult {
        config: config.clone(),
        columns: config.grid.iter().map(|a| a.column()).collect(),
        rows,
    })
}

/// Steady-state fidelity over (Δ, Ω).
pub fn run_fig3a(config: &ExperimentConfig, options: &RunOptions) -> Result<SweepResult, ConfigError> {
    check_experiment(config, Experiment::Fig3a)?;
    run_sweep(config, options)
}

/// Steady-state fidelity over (κ, γ_e).
pub fn run_fig3b(config: &ExperimentConfig, options: &RunOptions) -> Result<SweepResult, ConfigError> {
    check_experiment(config, Experiment::Fig3b)?;
    run_sweep(config, options)
}

/// Steady-state fidelity and purity against `U_rp`.
pub fn run_urp_sweep(config: &ExperimentConfig, options: &RunOptions) -> Result<SweepResult, ConfigError> {
    check_experiment(config, Experiment::UrpSweep)?;
    run_sweep(config, options)
}

/// One row of the experimental parameter table.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentalSet {
    pub name: &'static str,
    pub params: SystemParams,
}

/// The three experimental parameter sets, in units of `g`. Rates quoted
/// in MHz are all `2π × value`, so only their ratios to `g` matter.
pub fn experimental_sets() -> [ExperimentalSet; 3] {
    let set = |name, g: f64, kappa: f64, gamma_e: f64, gamma: f64, omega_r: f64, omega: f64, delta: f64| ExperimentalSet {
        name,
        params: SystemParams {
            g: 1.0,
            kappa: kappa / g,
            gamma_e: gamma_e / g,
            gamma: gamma / g,
            omega_r,
            omega,
            delta,
            u_rr: None,
            u_rp: 0.0,
            n_c: 2,
        },
    };
    [
        set("set1", 10.6, 1.3, 3.0, 0.03, 2.0, 0.002, 100.0),
        set("set2", 185.0, 53.0, 3.0, 0.144, 100.0 / 185.0, 0.002, 24.0),
        set("set3", 14.4, 0.66, 3.0, 0.03, 1.6, 0.006, 80.0),
    ]
}

/// Steady states of the experimental sets. Only `n_c`, the solver and
/// the model kind are taken from `config`.
pub fn run_expt_table(config: &ExperimentConfig, options: &RunOptions) -> Result<SweepResult, ConfigError> {
    check_experiment(config, Experiment::ExptTable)?;
    let n_c = config.base_params()?.n_c;
    let sets = experimental_sets();
    let rows = in_pool(options, || {
        sets.into_par_iter()
            .map(|s| {
                let params = SystemParams { n_c, ..s.params };
                solve_row(Some(s.name.to_string()), Vec::new(), Ok(params), config)
            })
            .collect()
    });
    Ok(SweepResult {
        config: config.clone(),
        columns: Vec::new(),
        rows,
    })
}

/// Full and effective trajectories from the same initial state.
#[derive(Clone, Debug)]
pub struct Fig3cResult {
    pub config: ExperimentConfig,
    pub full: TrajectoryResult,
    pub effective: TrajectoryResult,
}

impl Fig3cResult {
    /// `(t, F_full, F_eff)` at every checkpoint both runs recorded.
    pub fn shared_checkpoints(&self) -> Vec<(f64, f64, f64)> {
        self.full
            .times
            .iter()
            .zip(&self.full.snapshots)
            .filter_map(|(&t, s)| {
                let k = self.effective.times.iter().position(|&te| same_time(t, te))?;
                Some((t, s.fidelity, self.effective.snapshots[k].fidelity))
            })
            .collect()
    }

    /// Columns `t_g, fidelity_full, fidelity_eff`; a cell is empty where
    /// that run has no record.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(header_block(&self.config).as_bytes())?;
        writeln!(out, "t_g,fidelity_full,fidelity_eff")?;
        let mut times: Vec<f64> = self.full.times.iter().chain(&self.effective.times).copied().collect();
        times.sort_by(f64::total_cmp);
        times.dedup_by(|a, b| same_time(*a, *b));
        let cell = |run: &TrajectoryResult, t: f64| {
            run.times
                .iter()
                .position(|&tr| same_time(t, tr))
                .map(|k| run.snapshots[k].fidelity.to_string())
                .unwrap_or_default()
        };
        for t in times {
            writeln!(out, "{},{},{}", t, cell(&self.full, t), cell(&self.effective, t))?;
        }
        Ok(())
    }
}

fn same_time(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

fn initial_state(space: &StateSpace, label: &str) -> Result<DensityMatrix, ExperimentError> {
    let target = TargetState::basis(space, label)?;
    Ok(DensityMatrix::pure(&target.vector).expect("normalized basis vector"))
}

/// Full model to `t_full` and effective model to `t_effective`, both from
/// the configured basis state.
pub fn run_fig3c(config: &ExperimentConfig) -> Result<Fig3cResult, ExperimentError> {
    check_experiment(config, Experiment::Fig3c)?;
    let params = config.base_params()?;
    let ev = config.evolution.clone().unwrap_or_default();
    let tol = config.solver.tol;

    let effective_model = build_effective_model(&params)?;
    let rho0 = initial_state(&effective_model.space, &ev.initial)?;
    let start = Instant::now();
    let effective = evolve(&effective_model, &rho0, ev.t_effective, ev.n_effective, tol)?;
    log::info!("effective model to gt = {}: {:.2?}", ev.t_effective, start.elapsed());

    let full_model = build_full_model(&params)?;
    let rho0 = initial_state(&full_model.space, &ev.initial)?;
    let start = Instant::now();
    let full = evolve(&full_model, &rho0, ev.t_full, ev.n_full, tol)?;
    log::info!("full model to gt = {}: {:.2?}", ev.t_full, start.elapsed());

    Ok(Fig3cResult {
        config: config.clone(),
        full,
        effective,
    })
}
