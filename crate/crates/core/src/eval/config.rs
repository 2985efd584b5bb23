//! TOML experiment configuration. Every section and key is optional; missing
//! keys take the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::daware::{DawareConfig, DawareTrainConfig};
use crate::diffusion::schedule::{DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_SAMPLING_STEPS, DEFAULT_T};
use crate::diffusion::{EpsNetConfig, EpsTrainConfig};
use crate::guidance::{EstimatorConfig, EstimatorTrainConfig, GuidanceMode};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub scale: usize,
    pub hr_size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { train_pairs: 500, test_pairs: 20, scale: 4, hr_size: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub net: EpsNetConfig,
    pub train: EpsTrainConfig,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self {
            timesteps: DEFAULT_T,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            net: EpsNetConfig::default(),
            train: EpsTrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DawareSection {
    pub net: DawareConfig,
    pub train: DawareTrainConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub net: EstimatorConfig,
    pub train: EstimatorTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub steps: usize,
    /// Images sampled together in one batch.
    pub batch: usize,
    pub rep_from_perturbed: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { steps: DEFAULT_SAMPLING_STEPS, batch: 20, rep_from_perturbed: false }
    }
}

/// One `(mode, α, perturbation)` evaluation cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub mode: GuidanceMode,
    pub alpha: f64,
    pub perturb: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Named grids: "perturbation", "alpha", "design", "baselines".
    pub presets: Vec<String>,
    pub cells: Vec<CellSpec>,
    pub output_dir: Option<PathBuf>,
    pub save_images: bool,
    /// Record wall time per row. Off by default so reruns produce identical CSV bytes.
    pub record_timing: bool,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self { presets: vec!["perturbation".into()], cells: Vec::new(), output_dir: None, save_images: false, record_timing: false }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub eps: Option<PathBuf>,
    pub daware: Option<PathBuf>,
    pub estimator: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub diffusion: DiffusionSection,
    pub daware: DawareSection,
    pub estimator: EstimatorSection,
    pub sampling: SamplingConfig,
    pub evaluate: EvaluateConfig,
    pub paths: PathsConfig,
}

/// Fixed sub-stream indices under the master seed.
pub mod streams {
    pub const EPS_INIT: u64 = 1;
    pub const EPS_TRAIN: u64 = 2;
    pub const DAWARE_INIT: u64 = 3;
    pub const DAWARE_TRAIN: u64 = 4;
    pub const ESTIMATOR_INIT: u64 = 5;
    pub const ESTIMATOR_TRAIN: u64 = 6;
    pub const SAMPLING: u64 = 7;
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// The master seed; there is no implicit default.
    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn hr_dims(&self) -> (usize, usize) {
        (self.data.hr_size, self.data.hr_size)
    }

    pub fn lr_dims(&self) -> (usize, usize) {
        (self.data.hr_size / self.data.scale, self.data.hr_size / self.data.scale)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.scale == 0 || d.hr_size % d.scale != 0 || d.hr_size % 4 != 0 {
            return Err(Error::Config(format!("hr_size {} must be divisible by 4 and by scale {}", d.hr_size, d.scale)));
        }
        if self.daware.net.scale != d.scale {
            return Err(Error::Config(format!("daware.net.scale {} differs from data.scale {}", self.daware.net.scale, d.scale)));
        }
        if self.sampling.steps == 0 || self.sampling.steps > self.diffusion.timesteps || self.sampling.batch == 0 {
            return Err(Error::Config("sampling.steps must be in 1..=timesteps and batch ≥ 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = ExperimentConfig::from_toml("seed = 5").unwrap();
        assert_eq!(c.seed().unwrap(), 5);
        assert_eq!(c.data.train_pairs, 500);
        assert_eq!(c.daware.train.consistency_weight, 0.1);
        assert_eq!(c.sampling.steps, 100);
        c.validate().unwrap();
    }

    #[test]
    fn seed_is_mandatory_and_unknown_keys_rejected() {
        assert!(ExperimentConfig::from_toml("").unwrap().seed().is_err());
        assert!(ExperimentConfig::from_toml("sede = 1").is_err());
    }

    #[test]
    fn round_trip_and_cells() {
        let text = r#"
            seed = 9
            [evaluate]
            presets = []
            cells = [{ mode = "ddnm-default", alpha = 1.0, perturb = false }]
        "#;
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.evaluate.cells[0].mode, GuidanceMode::DdnmDefault);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
