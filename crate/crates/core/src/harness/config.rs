//! JSON configuration of a full run: room, dataset, models, trials and
//! controllers. See `docs/config.md` for the field reference.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::acoustics::RoomSpec;
use crate::anc::{StopConfig, DEFAULT_BLOCK_SIZE, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::latent::{DenominatorMode, LatentScheme};
use crate::neural::Variant;
use crate::training::{Geometry, TrainingConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

fn schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    /// Master seed; every other stream is derived from it.
    pub seed: u64,
    pub room: RoomSpec,
    pub geometry: Geometry,
    #[serde(default)]
    pub anc: AncSettings,
    #[serde(default)]
    pub dataset: DatasetSettings,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub experiment: TrialSettings,
    pub controllers: Vec<ControllerSpec>,
    /// Where artifacts go; relative paths resolve against the config file.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AncSettings {
    pub epsilon: f64,
    pub noise_variance: f64,
    /// Relative error of the secondary-path estimate (0 = exact).
    pub g_hat_error: f64,
    /// Warm-up samples before block 0; defaults to 2·L.
    pub preroll: Option<usize>,
}

impl Default for AncSettings {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            noise_variance: 1.0,
            g_hat_error: 0.0,
            preroll: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSettings {
    pub n_positions: usize,
    pub step_size: f64,
    pub stop: StopConfig,
    pub max_retries: usize,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            n_positions: 2048,
            step_size: 30.0,
            stop: StopConfig::default(),
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub latent_dim: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            latent_dim: 32,
        }
    }
}

/// One autoencoder to train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub variant: Variant,
    #[serde(default)]
    pub mixup: bool,
    /// Overrides `training.epochs`.
    #[serde(default)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSettings {
    pub n_trials: usize,
    pub n_blocks: usize,
    pub switch_block: usize,
    pub block_size: usize,
    pub steady_window: usize,
    pub rho: f64,
    /// Probe trials per step-size candidate during tuning.
    pub tuning_trials: usize,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            n_trials: 50,
            n_blocks: 300,
            switch_block: 100,
            block_size: DEFAULT_BLOCK_SIZE,
            steady_window: 40,
            rho: 0.4,
            tuning_trials: 3,
        }
    }
}

/// A controller under test. A missing step size is tuned on probe trials
/// over `grid` (or the scheme's default grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ControllerSpec {
    Fxlms {
        name: String,
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        grid: Option<Vec<f64>>,
    },
    Latent {
        name: String,
        /// Name of an entry in `models`, or a path to a model file.
        model: String,
        scheme: LatentScheme,
        #[serde(default)]
        mu_z: Option<f64>,
        #[serde(default)]
        grid: Option<Vec<f64>>,
        #[serde(default)]
        denominator_mode: DenominatorMode,
        #[serde(default)]
        epsilon: Option<f64>,
    },
}

impl ControllerSpec {
    pub fn name(&self) -> &str {
        match self {
            ControllerSpec::Fxlms { name, .. } | ControllerSpec::Latent { name, .. } => name,
        }
    }
}

/// Default FxLMS tuning grid, [5, 100].
pub fn default_fxlms_grid() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 30.0, 50.0, 75.0, 100.0]
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema version {}",
                self.schema_version
            )));
        }
        self.room.validate().map_err(|e| Error::Config(e.to_string()))?;
        let t = &self.experiment;
        if t.block_size == 0 || t.n_trials == 0 {
            return Err(Error::Config("block_size and n_trials must be >= 1".into()));
        }
        if t.switch_block >= t.n_blocks {
            return Err(Error::Config("switch_block must be < n_blocks".into()));
        }
        if t.steady_window >= t.n_blocks - t.switch_block || t.steady_window >= t.switch_block {
            return Err(Error::Config(
                "steady_window must be shorter than both trial phases".into(),
            ));
        }
        if !(t.rho >= 0.0) {
            return Err(Error::Config("rho must be non-negative".into()));
        }
        self.training.validate()?;
        let mut names = std::collections::HashSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("duplicate model name {:?}", m.name)));
            }
        }
        let mut names = std::collections::HashSet::new();
        for c in &self.controllers {
            if !names.insert(c.name()) {
                return Err(Error::Config(format!("duplicate controller name {:?}", c.name())));
            }
            if c.name() == ANC_OFF {
                return Err(Error::Config(format!("controller name {ANC_OFF:?} is reserved")));
            }
        }
        Ok(())
    }

    pub fn preroll(&self) -> usize {
        self.anc.preroll.unwrap_or(2 * self.room.rir_length)
    }

    /// Output directory, resolved against the directory holding the config.
    pub fn output_dir(&self, config_dir: &Path) -> PathBuf {
        let dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("lfxlms-out"));
        if dir.is_absolute() {
            dir
        } else {
            config_dir.join(dir)
        }
    }
}

/// Reserved name of the ANC-off reference run.
pub const ANC_OFF: &str = "anc_off";

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "seed": 7,
        "room": {"dimensions": [6.0, 6.2, 3.0], "rt60": 0.15, "sample_rate": 16000.0, "rir_length": 128},
        "geometry": {"segment": [[1.5, 1.0, 1.0], [3.0, 2.0, 2.0]],
                     "secondary_source": [3.0, 2.5, 1.5], "error_mic": [4.5, 3.0, 1.5]},
        "controllers": [
            {"type": "fxlms", "name": "fxlms", "mu": 10.0},
            {"type": "latent", "name": "ae/latent", "model": "ae", "scheme": "latent"}
        ]
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.experiment.n_trials, 50);
        assert_eq!(c.experiment.rho, 0.4);
        assert_eq!(c.training.batch_size, 64);
        assert_eq!(c.preroll(), 256);
        assert!(matches!(
            &c.controllers[1],
            ControllerSpec::Latent { mu_z: None, denominator_mode: DenominatorMode::Blockend, .. }
        ));
    }

    #[test]
    fn invalid_phases_rejected() {
        let mut c: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        c.experiment.switch_block = 300;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        c.experiment.steady_window = 200;
        assert!(c.validate().is_err());
    }

    #[test]
    fn duplicate_and_reserved_names_rejected() {
        let mut c: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        c.controllers.push(c.controllers[0].clone());
        assert!(c.validate().is_err());
        let mut c: ExperimentConfig = serde_json::from_str(MINIMAL).unwrap();
        c.controllers[0] = ControllerSpec::Fxlms { name: ANC_OFF.into(), mu: None, grid: None };
        assert!(c.validate().is_err());
    }
}
