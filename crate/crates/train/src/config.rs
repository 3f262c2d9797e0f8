//! Run configuration, read from and written to TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fusionseg_core::pipeline::AugmentConfig;
use fusionseg_nn::{BackboneConfig, BackboneKind, BnOrder, FusionConfig, SkipSource};

use crate::error::{io, Error, Result};
use crate::loss::LossKind;

/// Network size. Unset fields take the backbone's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_filters: Option<usize>,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deep_supervision: Option<bool>,
    #[serde(default)]
    pub bn_order: BnOrder,
    #[serde(default)]
    pub intermediate_skips: SkipSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            grid: 64,
            base_filters: None,
            depth: 4,
            deep_supervision: None,
            bn_order: BnOrder::ReluBn,
            intermediate_skips: SkipSource::Both,
        }
    }
}

impl ModelConfig {
    pub fn backbone(&self, kind: BackboneKind, fusion: &FusionConfig) -> BackboneConfig {
        let d = BackboneConfig::of_kind(kind);
        BackboneConfig {
            base_filters: self.base_filters.unwrap_or(d.base_filters),
            depth: self.depth,
            deep_supervision: self.deep_supervision.unwrap_or(d.deep_supervision),
            bn_order: self.bn_order,
            grid: [self.grid; 3],
            ..d
        }
        .for_fusion(fusion)
    }

    pub fn fusion(&self, mut fusion: FusionConfig) -> FusionConfig {
        fusion.intermediate_skips = self.intermediate_skips;
        fusion
    }
}

/// Augmentation ranges stated for a 64-voxel grid; translation and shear are rescaled to
/// the model grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub max_shear: f64,
}

impl Default for AugmentSettings {
    fn default() -> Self {
        let a = AugmentConfig::default();
        Self {
            max_translation: a.max_translation,
            max_rotation_deg: a.max_rotation_deg,
            scale_range: a.scale_range,
            max_shear: a.max_shear,
        }
    }
}

impl AugmentSettings {
    pub fn for_grid(&self, grid: usize) -> AugmentConfig {
        AugmentConfig {
            max_translation: self.max_translation,
            max_rotation_deg: self.max_rotation_deg,
            scale_range: self.scale_range,
            max_shear: self.max_shear,
        }
        .scaled_to_grid(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub lr_floor: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub augment: bool,
    /// Every random choice of a run derives from this seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Binarization threshold for validation and test metrics.
    pub threshold: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub augmentation: AugmentSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            initial_lr: 1e-4,
            lr_decay: 0.1,
            lr_step: 10,
            lr_floor: 1e-6,
            batch_size: 2,
            loss: LossKind::DiceBce,
            augment: true,
            seed: None,
            threshold: 0.5,
            model: ModelConfig::default(),
            augmentation: AugmentSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(self.lr_floor >= 0.0) {
            return bad("lr_floor must be non-negative");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad("initial_lr must be positive");
        }
        if self.lr_step == 0 {
            return bad("lr_step must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        let (lo, hi) = self.augmentation.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("augmentation scale_range must satisfy 0 < lo <= hi");
        }
        if self.model.grid == 0 || self.model.depth == 0 {
            return bad("model grid and depth must be at least 1");
        }
        Ok(())
    }

    /// The configured seed, or an error if none was recorded.
    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("no seed recorded in the run configuration".into()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(io(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig {
            seed: Some(7),
            ..TrainConfig::default()
        };
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(cfg.to_toml().contains("loss = \"dice+bce\""));
    }

    #[test]
    fn partial_files_and_errors() {
        let text = "epochs = 3\ninitial_lr = 1e-3\nlr_decay = 0.5\nlr_step = 1\nlr_floor = 0.0\n\
                    batch_size = 1\nloss = \"dice\"\naugment = false\nthreshold = 0.5\n\
                    [model]\ngrid = 16\ndepth = 2\nbase_filters = 4\n";
        let cfg = TrainConfig::from_toml(text).unwrap();
        assert_eq!(cfg.model.base_filters, Some(4));
        assert_eq!(cfg.seed, None);
        assert!(cfg.seed().is_err());
        let bb = cfg.model.backbone(BackboneKind::Unetpp, &FusionConfig::early());
        assert_eq!((bb.base_filters, bb.depth, bb.grid, bb.input_channels), (4, 2, [16; 3], 2));
        assert!(bb.deep_supervision);
        assert!(TrainConfig::from_toml(&text.replace("epochs = 3", "epochs = 0")).is_err());
        assert!(TrainConfig::from_toml(&text.replace("lr_decay = 0.5", "lr_decay = 1.5")).is_err());
        assert!(TrainConfig::from_toml(&format!("{text}bogus = 1\n")).is_err());
        assert!(TrainConfig::from_toml("epochs = \"x\"").is_err());
    }
}
