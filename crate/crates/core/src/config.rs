//! Run configuration, read from TOML. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::degradation::{MixtureSpec, NoiseSpec};
use crate::error::{HidError, Result};
use crate::model_config::ModelConfig;
use crate::objective::OptimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epochs trained with Gaussian noise, then with mixture noise.
    pub gaussian_epochs: u64,
    pub mixture_epochs: u64,
    /// Optional cap on the number of optimizer steps.
    pub max_steps: Option<u64>,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub augment: bool,
    /// Consecutive failed steps after which the last checkpoint is restored.
    pub max_consecutive_failures: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            gaussian_epochs: 50,
            mixture_epochs: 50,
            max_steps: None,
            patch_size: 64,
            patch_stride: 16,
            augment: true,
            max_consecutive_failures: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// σ of the Gaussian phase, 0–255 scale.
    pub gaussian_sigma: f64,
    pub mixture: MixtureSpec,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            gaussian_sigma: 50.0,
            mixture: MixtureSpec::default(),
        }
    }
}

impl NoiseConfig {
    pub fn gaussian(&self) -> NoiseSpec {
        NoiseSpec::Gaussian {
            sigma: self.gaussian_sigma,
        }
    }

    pub fn mixture(&self) -> NoiseSpec {
        NoiseSpec::Mixture(self.mixture.clone())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Clean training cubes (`.hsic` files).
    pub train: Vec<PathBuf>,
    /// Held-out clean cube used for per-epoch validation.
    pub validation: Option<PathBuf>,
    /// Generate a toy dataset instead of reading files. The first held-out
    /// synthetic cube serves as validation cube.
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Checkpoint cadence in optimizer steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("run"),
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub noise: NoiseConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            train: TrainConfig::default(),
            noise: NoiseConfig::default(),
            data: DataConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HidError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HidError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HidError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optim.validate()?;
        self.noise.mixture.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.patch_size == 0 || t.patch_stride == 0 {
            return Err(HidError::Config(
                "batch_size, patch_size and patch_stride must be positive".into(),
            ));
        }
        if t.max_consecutive_failures == 0 {
            return Err(HidError::Config(
                "max_consecutive_failures must be positive".into(),
            ));
        }
        if !(self.noise.gaussian_sigma >= 0.0 && self.noise.gaussian_sigma.is_finite()) {
            return Err(HidError::Config(
                "noise.gaussian_sigma must be non-negative".into(),
            ));
        }
        self.model.check_spatial(t.patch_size, t.patch_size)?;
        if let Some(s) = &self.data.synthetic {
            if s.bands != self.model.bands {
                return Err(HidError::Config(format!(
                    "synthetic cubes have {} bands, model expects {}",
                    s.bands, self.model.bands
                )));
            }
        }
        Ok(())
    }
}
