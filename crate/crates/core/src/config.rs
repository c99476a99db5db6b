//! Run configuration: a preset, overridden by a flat TOML file, overridden by
//! command-line flags.
//!
//! ```toml
//! preset = "toy"
//! seed = 3
//! plan.m = 8
//! plan.offset_deg = 45.0
//! model.k = 4
//! ablate.no_vpfs = true
//! train.epochs = 30
//! ```

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttentionKind, ModelConfig};
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-sized backbone, 224-pixel viewports and the default schedule.
    #[default]
    Full,
    /// Four-channel stages on 64-pixel viewports, for desk-scale training.
    Toy,
    /// Smallest network, for gradient checks.
    Micro,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanLayer {
    pub m: Option<usize>,
    pub offset_deg: Option<f64>,
    pub fov: Option<f64>,
    pub size: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelLayer {
    pub k: Option<usize>,
    pub depths: Option<[usize; 4]>,
    pub dims: Option<[usize; 4]>,
    pub heads: Option<[usize; 4]>,
    pub kernel: Option<usize>,
    pub embed_dim: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub attention: Option<AttentionKind>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateLayer {
    pub no_dspn: Option<bool>,
    pub no_msfs: Option<bool>,
    pub no_vpfs: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLayer {
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub lr_init: Option<f64>,
    pub lr_min: Option<f64>,
    pub train_fraction: Option<f64>,
    pub dwa_temperature: Option<f64>,
    pub gamma: Option<u32>,
}

/// One source of settings; unset fields leave earlier sources untouched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub plan: PlanLayer,
    pub model: ModelLayer,
    pub ablate: AblateLayer,
    pub train: TrainLayer,
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn set<T: Copy>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        let (model, train) = match preset {
            Preset::Full => (ModelConfig::default(), TrainConfig::default()),
            Preset::Toy => (ModelConfig::toy(), TrainConfig::toy()),
            Preset::Micro => (ModelConfig::micro(), TrainConfig::toy()),
        };
        Self { preset, seed: train.seed, model, train }
    }

    /// Applies `layers` in order over the preset named by the last layer that
    /// names one, then validates the result.
    pub fn resolve(layers: &[ConfigLayer]) -> Result<Self> {
        let preset = layers.iter().rev().find_map(|l| l.preset).unwrap_or_default();
        let mut cfg = Self::from_preset(preset);
        for layer in layers {
            cfg.apply(layer);
        }
        cfg.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn apply(&mut self, l: &ConfigLayer) {
        set(&mut self.seed, l.seed);
        self.train.seed = self.seed;
        let m = &mut self.model;
        set(&mut m.m, l.plan.m);
        set(&mut m.offset_deg, l.plan.offset_deg);
        set(&mut m.fov_deg, l.plan.fov);
        set(&mut m.viewport_size, l.plan.size);
        set(&mut m.k, l.model.k);
        set(&mut m.backbone.depths, l.model.depths);
        set(&mut m.backbone.dims, l.model.dims);
        set(&mut m.backbone.heads, l.model.heads);
        set(&mut m.backbone.kernel, l.model.kernel);
        set(&mut m.backbone.embed_dim, l.model.embed_dim);
        set(&mut m.backbone.mlp_ratio, l.model.mlp_ratio);
        set(&mut m.attention, l.model.attention);
        if let Some(v) = l.ablate.no_dspn {
            m.enable_dspn = !v;
        }
        if let Some(v) = l.ablate.no_msfs {
            m.enable_msfs = !v;
        }
        if let Some(v) = l.ablate.no_vpfs {
            m.enable_vpfs = !v;
        }
        let t = &mut self.train;
        set(&mut t.batch_size, l.train.batch_size);
        set(&mut t.epochs, l.train.epochs);
        set(&mut t.lr_init, l.train.lr_init);
        set(&mut t.lr_min, l.train.lr_min);
        set(&mut t.train_fraction, l.train.train_fraction);
        if let Some(f) = l.train.train_fraction {
            t.val_fraction = 1.0 - f;
        }
        set(&mut t.dwa_temperature, l.train.dwa_temperature);
        set(&mut t.loss.gamma, l.train.gamma);
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Logs the fully resolved configuration.
    pub fn log_resolved(&self) {
        info!("resolved config: {}", self.to_json());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_preset() {
        let file = ConfigLayer::from_toml("preset = \"toy\"\nseed = 3\nplan.m = 6\nmodel.k = 2\n[train]\nepochs = 4\n")
            .unwrap();
        let flags = ConfigLayer { model: ModelLayer { k: Some(3), ..Default::default() }, ..Default::default() };
        let cfg = RunConfig::resolve(&[file, flags]).unwrap();
        assert_eq!(cfg.preset, Preset::Toy);
        assert_eq!(cfg.model.m, 6);
        assert_eq!(cfg.model.k, 3);
        assert_eq!(cfg.train.epochs, 4);
        assert_eq!(cfg.train.seed, 3);
        assert_eq!(cfg.model.backbone.dims, ModelConfig::toy().backbone.dims);
    }

    #[test]
    fn unknown_keys_and_invalid_values_are_config_errors() {
        assert!(matches!(ConfigLayer::from_toml("plan.q = 1"), Err(Error::Config(_))));
        let bad = ConfigLayer { model: ModelLayer { k: Some(9), ..Default::default() }, ..Default::default() };
        assert!(matches!(RunConfig::resolve(&[bad]), Err(Error::Config(_))));
    }

    #[test]
    fn ablation_flags_map_to_toggles() {
        let l = ConfigLayer {
            ablate: AblateLayer { no_dspn: Some(true), no_msfs: None, no_vpfs: Some(true) },
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&[l]).unwrap();
        assert!(!cfg.model.enable_dspn && cfg.model.enable_msfs && !cfg.model.enable_vpfs);
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }
}
