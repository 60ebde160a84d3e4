//! Declarative experiment configuration (TOML).

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, SystemParams};
use crate::solvers::SteadyMethod;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("config is for experiment '{found}' but '{expected}' was requested")]
    ExperimentMismatch { expected: Experiment, found: Experiment },
    #[error("grid axis '{name}': {reason}")]
    Axis { name: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Fig3a,
    Fig3b,
    Fig3c,
    UrpSweep,
    ExptTable,
    Custom,
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Fig3a => "fig3a",
            Experiment::Fig3b => "fig3b",
            Experiment::Fig3c => "fig3c",
            Experiment::UrpSweep => "urp-sweep",
            Experiment::ExptTable => "expt-table",
            Experiment::Custom => "custom",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Everything already in units of `g`.
    #[default]
    G,
    /// Frequencies in MHz; `params.g` must be given. Every rate is read as
    /// `2π × value`, and the common `2π` cancels in the conversion.
    Mhz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// One sweep axis over a [`SystemParams`] field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    #[serde(default)]
    pub scale: Scale,
    /// When set, axis values are multiples of this (resolved) field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_to: Option<String>,
    /// Extra values merged into the grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub include: Vec<f64>,
}

impl Axis {
    pub fn new(name: &str, start: f64, stop: f64, points: usize, scale: Scale) -> Self {
        Self {
            name: name.to_string(),
            start,
            stop,
            points,
            scale,
            relative_to: None,
            include: Vec::new(),
        }
    }

    /// Sorted, de-duplicated axis values (before any `relative_to` scaling).
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        let mut out: Vec<f64> = (0..n)
            .map(|k| {
                let f = k as f64 / (n - 1) as f64;
                match self.scale {
                    Scale::Linear => self.start + f * (self.stop - self.start),
                    Scale::Log => (self.start.ln() + f * (self.stop.ln() - self.start.ln())).exp(),
                }
            })
            .collect();
        for &x in &self.include {
            if !out.iter().any(|v| (v - x).abs() <= 1e-12 * x.abs().max(1.0)) {
                out.push(x);
            }
        }
        out.sort_by(f64::total_cmp);
        out
    }

    /// CSV column name.
    pub fn column(&self) -> String {
        format!("{}_over_{}", self.name, self.relative_to.as_deref().unwrap_or("g"))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let err = |reason: &str| ConfigError::Axis {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if !SystemParams::FIELDS.contains(&self.name.as_str()) || self.name == "n_c" {
            return Err(err("not a continuous SystemParams field"));
        }
        if let Some(rel) = &self.relative_to {
            if !SystemParams::FIELDS.contains(&rel.as_str()) || rel == "n_c" {
                return Err(err("relative_to names no SystemParams field"));
            }
        }
        if self.points < 2 {
            return Err(err("a sweep axis needs at least 2 points"));
        }
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(err("bounds must be finite"));
        }
        if self.scale == Scale::Log && (self.start <= 0.0 || self.stop <= 0.0) {
            return Err(err("log axes need positive bounds"));
        }
        Ok(())
    }
}

/// `name = factor × from`, applied after the grid values are set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub name: String,
    pub from: String,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub method: SteadyMethod,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_tol() -> f64 {
    1e-8
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SteadyMethod::Nullspace,
            tol: default_tol(),
        }
    }
}

/// Time-evolution horizons for `fig3c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionConfig {
    pub t_full: f64,
    pub n_full: usize,
    pub t_effective: f64,
    pub n_effective: usize,
    /// Initial basis state.
    #[serde(default = "default_initial")]
    pub initial: String,
}

fn default_initial() -> String {
    "000".to_string()
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            t_full: 5e3,
            n_full: 21,
            t_effective: 5e4,
            n_effective: 201,
            initial: default_initial(),
        }
    }
}

/// Which model a `custom` experiment solves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    #[default]
    Full,
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub units: Units,
    /// Overrides of [`SystemParams`] fields (`n_c` included).
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub grid: Vec<Axis>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<Link>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution: Option<EvolutionConfig>,
    #[serde(default)]
    pub model: ModelKind,
    /// Target state for fidelities: `W`, `Wprime` or a basis label.
    #[serde(default = "default_target")]
    pub target: String,
}

fn default_target() -> String {
    "W".to_string()
}

impl ExperimentConfig {
    fn base(experiment: Experiment) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment,
            units: Units::G,
            params: BTreeMap::new(),
            grid: Vec::new(),
            links: Vec::new(),
            output: None,
            solver: SolverConfig::default(),
            evolution: None,
            model: ModelKind::Full,
            target: default_target(),
        }
    }

    /// Built-in defaults for each experiment.
    pub fn default_for(experiment: Experiment) -> Self {
        let mut c = Self::base(experiment);
        let set = |c: &mut Self, pairs: &[(&str, f64)]| {
            for (k, v) in pairs {
                c.params.insert(k.to_string(), *v);
            }
        };
        match experiment {
            Experiment::Fig3a => {
                set(&mut c, &[("omega_r", 1.0), ("gamma", 0.002), ("gamma_e", 0.1), ("kappa", 0.0)]);
                c.grid = vec![
                    Axis::new("delta", 20.0, 60.0, 21, Scale::Linear),
                    Axis::new("omega", 0.005, 0.1, 21, Scale::Log),
                ];
            }
            Experiment::Fig3b => {
                set(&mut c, &[("omega", 0.01), ("omega_r", 1.0), ("delta", 35.0)]);
                c.grid = vec![
                    Axis::new("kappa", 0.0, 0.15, 15, Scale::Linear),
                    Axis::new("gamma_e", 0.02, 0.15, 15, Scale::Linear),
                ];
                c.links = vec![Link {
                    name: "gamma".into(),
                    from: "gamma_e".into(),
                    factor: 1.0 / 50.0,
                }];
            }
            Experiment::Fig3c => {
                set(
                    &mut c,
                    &[("omega", 0.05), ("omega_r", 1.0), ("delta", 45.0), ("gamma", 0.002), ("gamma_e", 0.1), ("kappa", 0.0)],
                );
                c.evolution = Some(EvolutionConfig::default());
            }
            Experiment::UrpSweep => {
                set(
                    &mut c,
                    &[("omega", 0.05), ("omega_r", 1.0), ("delta", 42.0), ("gamma", 0.002), ("gamma_e", 0.1), ("kappa", 0.0)],
                );
                let mut axis = Axis::new("u_rp", 0.25, 2.5, 25, Scale::Linear);
                axis.relative_to = Some("delta".into());
                axis.include = vec![1.5];
                c.grid = vec![axis];
            }
            Experiment::ExptTable | Experiment::Custom => {}
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema {
                found: self.schema_version,
            });
        }
        for axis in &self.grid {
            axis.validate()?;
        }
        for link in &self.links {
            for name in [&link.name, &link.from] {
                if !SystemParams::FIELDS.contains(&name.as_str()) || name == "n_c" {
                    return Err(ConfigError::Invalid(format!("link references unknown field '{name}'")));
                }
            }
        }
        if self.units == Units::Mhz && !self.params.contains_key("g") {
            return Err(ConfigError::Invalid("units = \"mhz\" requires params.g".into()));
        }
        if matches!(self.experiment, Experiment::Fig3c | Experiment::ExptTable) && !self.grid.is_empty() {
            return Err(ConfigError::Invalid(format!("{} takes no grid", self.experiment)));
        }
        if let Some(ev) = &self.evolution {
            if ev.n_full < 2 || ev.n_effective < 2 || !(ev.t_full > 0.0) || !(ev.t_effective > 0.0) {
                return Err(ConfigError::Invalid("evolution needs positive horizons and >= 2 records".into()));
            }
        }
        self.base_params()?;
        Ok(())
    }

    /// Conversion factor from configured units to units of `g`.
    fn unit_scale(&self) -> f64 {
        match self.units {
            Units::G => 1.0,
            Units::Mhz => 1.0 / self.params["g"],
        }
    }

    /// Defaults overlaid with `params`, converted to units of `g`.
    pub fn base_params(&self) -> Result<SystemParams, ConfigError> {
        let mut p = SystemParams::default();
        let scale = self.unit_scale();
        for (name, &value) in &self.params {
            if name == "n_c" {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(ConfigError::Invalid(format!("n_c = {value} is not a count")));
                }
                p.n_c = value as usize;
            } else {
                p.set(name, value * scale)?;
            }
        }
        p.validate()?;
        Ok(p)
    }

    /// Parameters at one grid point; `values` are raw axis values.
    pub fn params_at(&self, values: &[f64]) -> Result<SystemParams, ConfigError> {
        let mut p = self.base_params()?;
        let scale = self.unit_scale();
        for (axis, &x) in self.grid.iter().zip(values) {
            let v = match &axis.relative_to {
                Some(rel) => x * p.get(rel)?,
                None => x * scale,
            };
            p.set(&axis.name, v)?;
        }
        for link in &self.links {
            let v = link.factor * p.get(&link.from)?;
            p.set(&link.name, v)?;
        }
        p.validate()?;
        Ok(p)
    }

    /// Row-major grid (last axis fastest) of raw axis values.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self.grid.iter().map(Axis::values).collect();
        let mut points = vec![Vec::new()];
        for values in &axes {
            points = points
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |&v| {
                        let mut p = prefix.clone();
                        p.push(v);
                        p
                    })
                })
                .collect();
        }
        points
    }
}
