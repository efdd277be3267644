//! The pipeline configuration file.
//!
//! A single TOML document holds every tunable. Missing keys take their
//! defaults, unknown keys are rejected. The `PRIMING_CONFIG` environment
//! variable names the file used when no `--config` flag is given.
//!
//! ```toml
//! seed = 7
//!
//! [synthesis]
//! canvas_width = 256
//! canvas_height = 256
//!
//! [priming.gate]
//! theta_p = 0.95
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::KernelParams;
use crate::error::{Error, Result};
use crate::fixtures::CatalogSpec;
use crate::mask_extraction::MorphParams;
use crate::pose_pruning::PruneConfig;
use crate::priming::{PrimingConfig, SimulatedModelNoise};
use crate::synthesis::{Difficulty, SynthesisConfig};

pub const CONFIG_ENV: &str = "PRIMING_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the detection terms against the density term.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

/// Sizes of the generated train and test splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    /// Levels cycled through when generating scenes.
    pub levels: Vec<Difficulty>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_scenes: 12,
            test_scenes: 24,
            levels: Difficulty::ALL.to_vec(),
        }
    }
}

/// Simulated detector/counter settings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSimConfig {
    pub seed: u64,
    pub noise: SimulatedModelNoise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Base seed; every scene seed is derived from it.
    pub seed: u64,
    /// Existing catalog manifest; the procedural catalog is drawn when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog_manifest: Option<PathBuf>,
    pub catalog: CatalogSpec,
    pub masks: MorphParams,
    pub pruning: PruneConfig,
    pub synthesis: SynthesisConfig,
    pub density: KernelParams,
    pub loss: LossConfig,
    pub priming: PrimingConfig,
    pub dataset: DatasetConfig,
    pub models: ModelSimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            catalog_manifest: None,
            catalog: CatalogSpec::default(),
            masks: MorphParams::default(),
            pruning: PruneConfig::default(),
            synthesis: SynthesisConfig::test_profile(),
            density: KernelParams::default(),
            loss: LossConfig::default(),
            priming: PrimingConfig::default(),
            dataset: DatasetConfig::default(),
            models: ModelSimConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.masks.validate()?;
        PruneConfig::new(self.pruning.theta_m)?;
        self.synthesis.validate()?;
        self.density.validate()?;
        self.priming.gate.validate()?;
        self.models.noise.validate()?;
        if !(self.loss.lambda >= 0.0 && self.loss.lambda.is_finite()) {
            return Err(Error::invalid("loss.lambda must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.priming.tally_threshold) {
            return Err(Error::invalid("priming.tally_threshold must lie in [0, 1]"));
        }
        if self.dataset.levels.is_empty() {
            return Err(Error::invalid("dataset.levels must name at least one level"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::validation("pipeline config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Validation { message, .. } => Error::Validation {
                context: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// The explicit path if given, else the file named by `PRIMING_CONFIG`,
    /// else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        match explicit {
            Some(p) => Self::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
                _ => Ok(Self::default()),
            },
        }
    }
}

/// Reads a simulated-model file: `seed` plus a `[noise]` table.
pub fn load_model_sim(path: &Path) -> Result<ModelSimConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let cfg: ModelSimConfig =
        toml::from_str(&text).map_err(|e| Error::validation(path.display().to_string(), e.to_string()))?;
    cfg.noise.validate()?;
    Ok(cfg)
}
