//! Experiment configuration and the `calibrate`, `run`, `sweep` and `verify`
//! commands.
//!
//! Configs are JSON. Every certification precondition is checked when a config
//! is prepared, before any trajectory is computed.

mod calibrate;
pub mod reference;
mod run;
mod suite;
mod sweep;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::certify::{
    calibrate_noise, d2d_training_horizon, sensitivity_for, FormulaVariant, Horizon, Method, NoiseScale, PrivacyBudget, SensitivityBound,
};
use crate::data_engine::{Dataset, Selection, UnlearnRequest};
use crate::error::{Error, Result};
use crate::model_zoo::{certified_constants, LossFamily, LossSpec, ProjectionSet};
use crate::sgd_engine::{Algorithm, Recording, RunConfig};

pub use calibrate::{cmd_calibrate, CalibrateRequest, Calibration, Constants};
pub use run::{cmd_run, RunOptions, RunSummary, DISTANCES_FILE, RELEASES_FILE, SUMMARY_FILE, TRAJECTORIES_FILE};
pub use suite::{cmd_verify, Suite, VerifyOptions, VerifyReport};
pub use sweep::{cmd_sweep, SweepAxis, SweepOptions, SweepRow};

pub const OUTPUT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        n: usize,
        dimension: usize,
        radius: f64,
        seed: u64,
    },
    /// Relative paths resolve against the config file's directory.
    Csv {
        path: PathBuf,
        dimension: usize,
        radius: f64,
    },
}

impl DataSource {
    pub fn dimension(&self) -> usize {
        match self {
            DataSource::Synthetic { dimension, .. } | DataSource::Csv { dimension, .. } => *dimension,
        }
    }

    pub fn radius(&self) -> f64 {
        match self {
            DataSource::Synthetic { radius, .. } | DataSource::Csv { radius, .. } => *radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Defaults to the origin.
    #[serde(default)]
    pub center: Option<Vec<f64>>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub method: Method,
    pub eta: f64,
    /// Training steps. Optional for descent-based unlearning, where it
    /// defaults to the certified horizon.
    #[serde(default)]
    pub t: Option<u64>,
    pub k: u64,
    pub b: usize,
    /// Defaults to the origin.
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    /// Required for projected SGD, forbidden otherwise.
    #[serde(default)]
    pub projection: Option<ProjectionConfig>,
    pub seed: u64,
    /// Keep every n-th iterate in trajectory files (0 keeps none).
    #[serde(default)]
    pub iterate_stride: u64,
    /// Spacing of the time points written to the distances table.
    #[serde(default = "default_distance_stride")]
    pub distance_stride: u64,
}

fn default_distance_stride() -> u64 {
    10
}

fn default_replicas() -> usize {
    200
}

/// Whether unlearning starts from the noiseless checkpoint (certified) or
/// from a noisy copy of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseMode {
    #[default]
    NoiselessCheckpoint,
    NoisyRelease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    /// With the `t` axis: plan `K` for this sensitivity at each `T`.
    #[serde(default)]
    pub sigma_target: Option<f64>,
    #[serde(default)]
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub loss: LossFamily,
    pub data: DataSource,
    pub unlearn: Selection,
    pub run: RunSection,
    pub privacy: PrivacyBudget,
    #[serde(default)]
    pub variant: FormulaVariant,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub release_mode: ReleaseMode,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// A validated experiment: data, request, constants, run configuration and
/// the certified bound with its noise scale.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub request: UnlearnRequest,
    pub spec: LossSpec,
    pub run: RunConfig,
    pub bound: SensitivityBound,
    pub horizon: Option<Horizon>,
    pub noise: NoiseScale,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic { n, dimension, radius, seed } => {
                Dataset::synthetic(&self.loss, *n, *dimension, *radius, *seed)
            }
            DataSource::Csv { path, dimension, radius } => {
                let full = match &self.base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.clone(),
                };
                Dataset::from_csv(&full, &self.loss, *dimension, *radius)
            }
        }
    }

    fn projection(&self, d: usize) -> Result<Option<ProjectionSet>> {
        match (&self.run.projection, self.run.method.projected()) {
            (Some(p), true) => {
                let center = p.center.clone().unwrap_or_else(|| vec![0.0; d]);
                if center.len() != d {
                    return Err(Error::config("projection center dimension does not match the data"));
                }
                Ok(Some(ProjectionSet::new(center, p.radius)?))
            }
            (None, true) => Err(Error::config("projected SGD requires run.projection")),
            (Some(_), false) => Err(Error::config("run.projection is only valid for projected SGD (psgd_r2d)")),
            (None, false) => Ok(None),
        }
    }

    /// Validates everything and computes the certified bound. Runs no trajectories.
    pub fn prepare(&self) -> Result<Prepared> {
        self.privacy.validate()?;
        if self.replicas == 0 {
            return Err(Error::config("replicas must be at least 1"));
        }
        let d = self.data.dimension();
        let dataset = self.load_dataset()?;
        let request = self.unlearn.resolve(dataset.len())?;
        let projection = self.projection(d)?;
        let theta0 = self.run.theta0.clone().unwrap_or_else(|| vec![0.0; d]);
        let spec = certified_constants(self.loss, d, self.data.radius(), projection.as_ref(), &theta0)?;
        let method = self.run.method;
        let algorithm = if method.is_r2d() { Algorithm::R2d } else { Algorithm::D2d };
        let (n, m) = (dataset.len(), request.m());
        let mut warnings = Vec::new();

        let t = match (self.run.t, method) {
            (Some(t), _) => t,
            (None, Method::SgdD2d) => {
                let mu = spec.strong_convexity;
                d2d_training_horizon(self.run.k, self.run.eta, mu, spec.noise_b, spec.noise_c, spec.loss_at_init)?.t
            }
            (None, _) => return Err(Error::config("run.t is required for rewinding methods")),
        };
        let run = RunConfig {
            eta: self.run.eta,
            t,
            k: self.run.k,
            b: self.run.b,
            dimension: d,
            projection,
            algorithm,
            seed: self.run.seed,
            theta0,
            recording: Recording { iterate_stride: self.run.iterate_stride, diagnostics: false },
        };
        run.validate()?;
        let (bound, horizon) = sensitivity_for(method, self.variant, &spec, run.eta, n, m, run.t, run.k)?;
        if let Some(w) = horizon.as_ref().and_then(|h| h.warning.clone()) {
            warnings.push(w);
        }
        if self.release_mode == ReleaseMode::NoisyRelease {
            warnings.push(
                "noisy_release mode: unlearning starts from a noisy checkpoint; the certificate covers the noiseless-checkpoint mode only"
                    .into(),
            );
        }
        let noise = calibrate_noise(&bound, &self.privacy)?;
        Ok(Prepared {
            config: self.clone(),
            dataset,
            request,
            spec,
            run,
            bound,
            horizon,
            noise,
            warnings,
        })
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<usize>,
    pub variant: Option<FormulaVariant>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.run.seed = s;
        }
        if let Some(r) = self.replicas {
            cfg.replicas = r;
        }
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
    }
}

/// Either a full experiment or a bare calibration request; told apart by the
/// presence of a `constants` key.
#[derive(Debug, Clone)]
pub enum CalibrateInput {
    Experiment(Box<ExperimentConfig>),
    Request(CalibrateRequest),
}

impl CalibrateInput {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("constants").is_some() {
            Ok(Self::Request(serde_json::from_value(value)?))
        } else {
            Ok(Self::Experiment(Box::new(serde_json::from_value(value)?)))
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let mut input = Self::from_json(&std::fs::read_to_string(path)?)?;
        if let Self::Experiment(cfg) = &mut input {
            cfg.base_dir = path.parent().map(Path::to_path_buf);
        }
        Ok(input)
    }
}
