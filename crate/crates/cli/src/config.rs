//! The run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use zoisim_core::meanfield::ParticleOptions;
use zoisim_core::model::sample_uniform;
use zoisim_core::observables::TestFunction;
use zoisim_core::{ModelParams, Population, Position, RadiusLaw};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    /// serde_json reports the line, column and offending key.
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Model(#[from] zoisim_core::Error),
    #[error("invalid option `{field}`: {constraint}")]
    Option {
        field: &'static str,
        constraint: String,
    },
}

/// One explicit initial individual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndividualSpec {
    pub p: Position,
    pub r: f64,
}

/// Initial population: an explicit list, or `count` individuals with
/// uniform positions and radii from `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Individuals(Vec<IndividualSpec>),
    Sample { count: usize, radius: RadiusLaw },
}

impl InitSpec {
    pub fn count(&self) -> usize {
        match self {
            InitSpec::Individuals(xs) => xs.len(),
            InitSpec::Sample { count, .. } => *count,
        }
    }

    /// Builds the initial population; sampling draws from `rng` before the
    /// engine does.
    pub fn build<R: Rng + ?Sized>(
        &self,
        params: &ModelParams,
        rng: &mut R,
    ) -> zoisim_core::Result<Population> {
        match self {
            InitSpec::Individuals(xs) => {
                let init: Vec<(Position, f64)> = xs.iter().map(|x| (x.p, x.r)).collect();
                Population::new(&init, params)
            }
            InitSpec::Sample { count, radius } => {
                Population::new(&sample_uniform(*count, *radius, params, rng), params)
            }
        }
    }
}

fn default_replicas() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_functions() -> Vec<TestFunction> {
    vec![TestFunction::One, TestFunction::Radius]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOptions {
    /// Functions whose ensemble moments are written.
    pub functions: Vec<TestFunction>,
    /// Replicas (from 0) whose event logs and snapshots are written.
    pub trajectories: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            functions: default_functions(),
            trajectories: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Particle,
    Grid,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanfieldOptions {
    pub solver: SolverChoice,
    /// Initial mass; defaults to the initial population count.
    pub mass: Option<f64>,
    pub particle: ParticleOptions,
    pub lattice_side: usize,
    pub radius_nodes: usize,
    pub grid_cells: usize,
    pub grid_dt: f64,
    /// Write every particle at every output time, not only the summary.
    pub write_particles: bool,
}

impl Default for MeanfieldOptions {
    fn default() -> Self {
        MeanfieldOptions {
            solver: SolverChoice::Particle,
            mass: None,
            particle: ParticleOptions::default(),
            lattice_side: 8,
            radius_nodes: 8,
            grid_cells: 1000,
            grid_dt: 1e-3,
            write_particles: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeOptions {
    pub k_list: Vec<u64>,
    pub functions: Vec<TestFunction>,
    /// Limit mass `⟨ξ₀, 1⟩`; defaults to the initial population count.
    pub m0: Option<f64>,
    pub particle: ParticleOptions,
    pub lattice_side: usize,
    pub radius_nodes: usize,
}

impl Default for ConvergeOptions {
    fn default() -> Self {
        ConvergeOptions {
            k_list: vec![50, 200, 800],
            functions: default_functions(),
            m0: None,
            particle: ParticleOptions::default(),
            lattice_side: 8,
            radius_nodes: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidateOptions {
    pub lens_triples: usize,
    pub lens_darts: usize,
    pub lens_tolerance: f64,
    /// Horizon of the branching, domination and martingale checks;
    /// defaults to `t_max`.
    pub horizon: Option<f64>,
    /// Replicas of the stochastic checks; defaults to `replicas`.
    pub replicas: Option<usize>,
    pub qv_tolerance: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            lens_triples: 100,
            lens_darts: 10_000_000,
            lens_tolerance: 1e-3,
            horizon: None,
            replicas: None,
            qv_tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub init: InitSpec,
    pub t_max: f64,
    #[serde(default)]
    pub snapshot_every: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub meanfield: MeanfieldOptions,
    #[serde(default)]
    pub converge: ConvergeOptions,
    #[serde(default)]
    pub validate: ValidateOptions,
}

fn check(ok: bool, field: &'static str, constraint: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Option {
            field,
            constraint: constraint.into(),
        })
    }
}

impl RunConfig {
    pub fn from_json(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every model constraint plus the run options.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        check(
            self.t_max.is_finite() && self.t_max >= 0.0,
            "t_max",
            "must be finite and nonnegative",
        )?;
        if let Some(dt) = self.snapshot_every {
            check(dt.is_finite() && dt > 0.0, "snapshot_every", "must be positive")?;
        }
        check(self.replicas >= 1, "replicas", "must be at least 1")?;
        match &self.init {
            InitSpec::Sample { radius, .. } => {
                let (lo, hi) = match *radius {
                    RadiusLaw::Fixed(r) => (r, r),
                    RadiusLaw::Uniform(lo, hi) => (lo, hi),
                };
                check(
                    lo <= hi && lo >= self.model.r_min && hi <= self.model.r_max,
                    "init.sample.radius",
                    "must lie within [r_min, r_max]",
                )?;
            }
            InitSpec::Individuals(_) => {
                // Checked entry by entry when the population is built.
                self.init.build(&self.model, &mut zoisim_core::rng::replica_rng(0, 0))?;
            }
        }
        let k = &self.converge.k_list;
        check(
            !k.is_empty() && k[0] >= 1 && k.windows(2).all(|w| w[0] < w[1]),
            "converge.k_list",
            "must be nonempty, positive and strictly ascending",
        )?;
        check(
            self.meanfield.lattice_side >= 1 && self.converge.lattice_side >= 1,
            "lattice_side",
            "must be at least 1",
        )?;
        check(
            self.meanfield.radius_nodes >= 1 && self.converge.radius_nodes >= 1,
            "radius_nodes",
            "must be at least 1",
        )?;
        check(self.meanfield.grid_cells >= 1, "meanfield.grid_cells", "must be at least 1")?;
        check(self.meanfield.grid_dt > 0.0, "meanfield.grid_dt", "must be positive")?;
        check(
            self.validate.lens_triples >= 1 && self.validate.lens_darts >= 1,
            "validate.lens",
            "triples and darts must be positive",
        )?;
        Ok(())
    }

    /// Radius law of the sampled initial population, if any.
    pub fn radius_law(&self) -> Option<RadiusLaw> {
        match self.init {
            InitSpec::Sample { radius, .. } => Some(radius),
            InitSpec::Individuals(_) => None,
        }
    }
}

/// A parsed configuration with the hash of its source bytes.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub sha256: String,
}

pub fn parse_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let bytes = std::fs::read(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| ConfigError::Read {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })?;
    let config = RunConfig::from_json(&text, path)?;
    Ok(LoadedConfig {
        config,
        sha256: sha256_hex(&bytes),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
