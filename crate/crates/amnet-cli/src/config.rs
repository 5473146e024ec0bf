//! One JSON run configuration with a section per subsystem. Every field has
//! a default, so `{}` is a valid config and partial files only override what
//! they mention.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use amnet_core::{Error, ModelConfig, Result, SynthConfig, TrainConfig};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Dataset root with one sequence directory per entry. The --dataset
    /// flag takes precedence when both are given.
    pub dataset: Option<PathBuf>,
    /// Names of the sequences to evaluate; empty means every directory.
    pub sequences: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Reads and validates a config file. Unreadable or unparsable files are
    /// config errors, not I/O errors: the exit-code contract reserves the
    /// data-error code for runtime artifacts (sequences, images, reports).
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: path.display().to_string(),
            reason: format!("cannot read config file: {e}"),
        })?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config {
            field: path.display().to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        // The tracker always crops its search region at 3x the target side,
        // so a trained model only ever sees that ratio; reject configs that
        // would train one geometry and track another.
        if self.model.roi_size != 3 * self.model.template_size {
            return Err(Error::Config {
                field: "model.roi_size".to_string(),
                reason: format!(
                    "search region must be 3x the template size ({} != 3 * {})",
                    self.model.roi_size, self.model.template_size
                ),
            });
        }
        Ok(())
    }

    /// Config from a path if one was given, otherwise all defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<RunConfig> {
        match path {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }
}
