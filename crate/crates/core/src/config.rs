//! Run configuration: the union of every module's knobs plus data paths.
//!
//! Loaded from JSON, overridden key by key with dotted paths, validated
//! fully before any side effect. Unknown keys are rejected outright.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::SynthSpec;
use crate::error::{Error, Result};
use crate::fingerprint::fingerprint_of;
use crate::model::ModelConfig;
use crate::msssim::{LossConfig, SsimParams};
use crate::noise::NoiseConfig;
use crate::training::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root; `synth-data` also writes here.
    pub root: String,
    pub category: String,
    /// Where checkpoints, logs and reports land.
    pub out_dir: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: "data".into(),
            category: "synthetic".into(),
            out_dir: "runs/default".into(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Anomaly-map smoothing sigma; unset scales the desk-scale default of
    /// 4 px at 64x64 proportionally with the image size.
    pub smooth_sigma: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub noise: NoiseConfig,
    pub ssim: SsimParams,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Applies one `key=value` override, where `key` is a dotted path like
    /// `noise.lambda` and `value` parses as JSON scalar (bare words become
    /// strings). Unknown keys and ill-typed values fail before anything
    /// runs.
    pub fn apply_override(&self, key: &str, raw_value: &str) -> Result<RunConfig> {
        let mut tree = serde_json::to_value(self)?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed config key '{key}'")));
        }
        let mut node = &mut tree;
        for part in &parts[..parts.len() - 1] {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(*part))
                .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        }
        let leaf = parts[parts.len() - 1];
        let object = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        if !object.contains_key(leaf) {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        let parsed: serde_json::Value = serde_json::from_str(raw_value)
            .unwrap_or_else(|_| serde_json::Value::String(raw_value.to_string()));
        object.insert(leaf.to_string(), parsed);
        serde_json::from_value(tree)
            .map_err(|e| Error::Config(format!("invalid value for '{key}': {e}")))
    }

    /// Points every random stream (split/init/noise and the synthetic
    /// generator) at one seed.
    pub fn with_all_seeds(&self, seed: u64) -> RunConfig {
        let mut cfg = self.clone();
        cfg.train.split_seed = seed;
        cfg.train.init_seed = seed;
        cfg.train.noise_seed = seed;
        cfg.synth.seed = seed;
        cfg
    }

    /// Full fail-fast validation across every section.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.noise.validate()?;
        self.ssim.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.train.image_size % self.model.size_factor() != 0 {
            return Err(Error::Config(format!(
                "train.image_size {} must be divisible by 2^(model.num_scales-1) = {}",
                self.train.image_size,
                self.model.size_factor()
            )));
        }
        if let Some(s) = self.eval.smooth_sigma {
            if s < 0.0 {
                return Err(Error::Config(format!(
                    "eval.smooth_sigma must be >= 0, got {s}"
                )));
            }
        }
        if self.data.root.is_empty() || self.data.out_dir.is_empty() || self.data.category.is_empty()
        {
            return Err(Error::Config(
                "data.root, data.category and data.out_dir must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// Smoothing sigma for anomaly maps; defaults to 4 px at 64x64, scaled
    /// proportionally with the configured image size.
    pub fn smooth_sigma(&self) -> f64 {
        self.eval
            .smooth_sigma
            .unwrap_or(4.0 * self.train.image_size as f64 / 64.0)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint_of(self)
    }

    pub fn data_root(&self) -> PathBuf {
        PathBuf::from(&self.data.root)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.data.out_dir)
    }
}
