//! Experiment description: one TOML file per run.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::{ChainModel, ModelKind};
use crate::controllers::Strategy;
use crate::error::{Error, Result};
use crate::estimator::{DiagnosticsSettings, Gaussian, SamplingSettings, StateDensity, SubsetProblem, Uniform};
use crate::oracle::{BallOracle, ConstantOracle, IslandsOracle, ProcessOracle, ReliabilityOracle};
use crate::space::{PerturbationRadii, StateSpace};
use crate::systems::quadrotor::{quad_statespace, QuadrotorSyntheticOracle, QUAD_SAMPLED_STATE};
use crate::systems::vdp::{vdp_oracle, VdpProblem};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    /// Master seed. TOML integers are signed, so at most `i64::MAX`.
    pub seed: u64,
    /// Worker threads; defaults to the available parallelism. Results do not
    /// depend on it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Latency budget `T` in seconds, for the time-between-failures line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_seconds: Option<f64>,
    /// Constant `K` of the product variance hypothesis; the check is skipped without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_bound_k: Option<f64>,
    pub space: SpaceConfig,
    pub oracle: OracleConfig,
    pub model: ModelConfig,
    pub sampling: SamplingSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<DensityConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleSpace {
    /// `[-8, 8]^2`.
    Vdp,
    /// `[-50,50]^3 x [-50,50]^3 x S^3 x [-5,5]^3`.
    Quadrotor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpaceConfig {
    Example { example: ExampleSpace },
    Custom(StateSpace),
}

impl SpaceConfig {
    pub fn build(&self) -> Result<StateSpace> {
        match self {
            SpaceConfig::Example { example: ExampleSpace::Vdp } => Ok(VdpProblem::space()),
            SpaceConfig::Example { example: ExampleSpace::Quadrotor } => Ok(quad_statespace()),
            SpaceConfig::Custom(space) => {
                space.validate()?;
                Ok(space.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleConfig {
    Constant { reliable: bool },
    Ball { center: Vec<f64>, radius: f64 },
    Islands { centers: Vec<Vec<f64>>, radius: f64 },
    Vdp(VdpProblem),
    QuadrotorSynthetic(QuadrotorSyntheticOracle),
    /// External program speaking the line protocol on stdin/stdout.
    Process { command: Vec<String> },
}

impl OracleConfig {
    pub fn build(&self, space: &StateSpace, strategy: Strategy) -> Result<Arc<dyn ReliabilityOracle>> {
        Ok(match self {
            OracleConfig::Constant { reliable } => Arc::new(ConstantOracle(*reliable)),
            OracleConfig::Ball { center, radius } => Arc::new(BallOracle::new(space, center.clone(), *radius)?),
            OracleConfig::Islands { centers, radius } => Arc::new(IslandsOracle::new(space, centers.clone(), *radius)?),
            OracleConfig::Vdp(problem) => {
                problem.validate()?;
                if space.dim() != 2 {
                    return Err(Error::InvalidConfig("the vdp oracle needs a 2-dimensional space".into()));
                }
                Arc::new(vdp_oracle(problem.clone(), strategy))
            }
            OracleConfig::QuadrotorSynthetic(oracle) => {
                oracle.validate()?;
                if space.dim() != QUAD_SAMPLED_STATE {
                    return Err(Error::InvalidConfig("the quadrotor-synthetic oracle needs the quadrotor space".into()));
                }
                Arc::new(oracle.clone())
            }
            OracleConfig::Process { command } => Arc::new(ProcessOracle::spawn(command)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// `N`.
    pub length: usize,
    /// One radius per block.
    pub r_p: Vec<f64>,
    pub r_rwm: Vec<f64>,
    /// How controller-backed oracles treat concurrent-design perturbations.
    #[serde(default)]
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityConfig {
    Uniform,
    /// Unnormalized `exp(-|x - mean|^2 / (2 sd^2))`.
    Gaussian { mean: Vec<f64>, sd: f64 },
}

impl DensityConfig {
    pub fn build(&self, space: &StateSpace) -> Result<Arc<dyn StateDensity>> {
        match self {
            DensityConfig::Uniform => Ok(Arc::new(Uniform)),
            DensityConfig::Gaussian { mean, sd } => {
                if mean.len() != space.dim() || !(*sd > 0.0 && sd.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::InvalidConfig("gaussian density needs a finite mean of the space dimension and sd > 0".into()));
                }
                Ok(Arc::new(Gaussian { mean: mean.clone(), sd: *sd }))
            }
        }
    }
}

fn default_report() -> String {
    "report.json".into()
}
fn default_batches() -> String {
    "batches.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Output directory; defaults to `out/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_batches")]
    pub batches: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: None, report: default_report(), batches: default_batches() }
    }
}

/// A validated config turned into pipeline inputs.
#[derive(Clone)]
pub struct Experiment {
    pub problem: SubsetProblem,
    pub sampling: SamplingSettings,
    pub diagnostics: Option<DiagnosticsSettings>,
    pub seed: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Everything that can be checked without starting an oracle process.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.trim().is_empty() {
            return Err(Error::InvalidConfig("name must not be empty".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::InvalidConfig("seed must be at most 2^63 - 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidConfig("workers must be at least 1".into()));
        }
        if let Some(t) = self.latency_seconds {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidConfig(format!("latency_seconds must be positive, got {t}")));
            }
        }
        if let Some(k) = self.variance_bound_k {
            if !(k > 0.0 && k.is_finite()) {
                return Err(Error::InvalidConfig(format!("variance_bound_k must be positive, got {k}")));
            }
        }
        if self.output.report.is_empty() || self.output.batches.is_empty() {
            return Err(Error::InvalidConfig("output file names must not be empty".into()));
        }
        self.sampling.validate()?;
        if let Some(d) = &self.diagnostics {
            d.validate()?;
        }
        let space = self.space.build()?;
        ChainModel::new(self.model.kind, self.model.length, PerturbationRadii::new(self.model.r_p.clone()), &space)?;
        PerturbationRadii::new(self.model.r_rwm.clone()).validate(&space)?;
        if let Some(d) = &self.density {
            d.build(&space)?;
        }
        if !matches!(self.oracle, OracleConfig::Process { .. }) {
            self.oracle.build(&space, self.model.strategy)?;
        } else if let OracleConfig::Process { command } = &self.oracle {
            if command.is_empty() {
                return Err(Error::InvalidConfig("process oracle needs a command".into()));
            }
        }
        Ok(())
    }

    /// Worker count after defaults.
    pub fn resolved_workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output.dir.clone().unwrap_or_else(|| PathBuf::from("out").join(&self.name))
    }

    pub fn build(&self) -> Result<Experiment> {
        self.validate()?;
        let space = self.space.build()?;
        let model = ChainModel::new(self.model.kind, self.model.length, PerturbationRadii::new(self.model.r_p.clone()), &space)?;
        let oracle = self.oracle.build(&space, self.model.strategy)?;
        let density = self.density.as_ref().map(|d| d.build(&space)).transpose()?;
        Ok(Experiment {
            problem: SubsetProblem { space, model, r_rwm: PerturbationRadii::new(self.model.r_rwm.clone()), oracle, density },
            sampling: self.sampling.clone(),
            diagnostics: self.diagnostics.clone(),
            seed: self.seed,
            workers: self.resolved_workers(),
        })
    }
}
