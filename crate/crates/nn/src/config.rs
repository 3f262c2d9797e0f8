//! Architecture configuration for backbones and fusion strategies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Unet,
    Unetpp,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Unet => "unet",
            Self::Unetpp => "unetpp",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Self::Unet),
            "unetpp" => Ok(Self::Unetpp),
            _ => Err(Error::InvalidConfig(format!("unknown backbone `{s}` (unet|unetpp)"))),
        }
    }
}

/// Position of batch normalization inside a convolution unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BnOrder {
    /// conv → ReLU → BN
    #[default]
    ReluBn,
    /// conv → BN → ReLU
    BnRelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub base_filters: usize,
    /// Number of pooling stages.
    pub depth: usize,
    pub input_channels: usize,
    /// U-Net++ only: one head per full-resolution nested node, averaged at inference.
    pub deep_supervision: bool,
    #[serde(default)]
    pub bn_order: BnOrder,
    /// Spatial input grid the model is built for.
    pub grid: [usize; 3],
}

impl BackboneConfig {
    /// Filter ladder 16, 32, 64, 128, 256 on a 64³ grid.
    pub fn unet() -> Self {
        Self {
            kind: BackboneKind::Unet,
            base_filters: 16,
            depth: 4,
            input_channels: 1,
            deep_supervision: false,
            bn_order: BnOrder::ReluBn,
            grid: [64; 3],
        }
    }

    /// `32 · 2^i` kernels at stage `i`, deep supervision on, 64³ grid.
    pub fn unetpp() -> Self {
        Self {
            kind: BackboneKind::Unetpp,
            base_filters: 32,
            deep_supervision: true,
            ..Self::unet()
        }
    }

    pub fn of_kind(kind: BackboneKind) -> Self {
        match kind {
            BackboneKind::Unet => Self::unet(),
            BackboneKind::Unetpp => Self::unetpp(),
        }
    }

    /// Copy with width, depth and grid replaced.
    pub fn scaled(self, base_filters: usize, depth: usize, grid: usize) -> Self {
        Self {
            base_filters,
            depth,
            grid: [grid; 3],
            ..self
        }
    }

    /// Copy whose input channel count matches `fusion`.
    pub fn for_fusion(self, fusion: &FusionConfig) -> Self {
        Self {
            input_channels: fusion.input_channels(),
            ..self
        }
    }

    /// Kernels at encoder stage `i`.
    pub fn filters(&self, i: usize) -> usize {
        self.base_filters << i
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_filters == 0 || self.input_channels == 0 {
            return Err(Error::InvalidConfig(
                "depth, base_filters and input_channels must be at least 1".into(),
            ));
        }
        if self.depth > 16 {
            return Err(Error::InvalidConfig(format!("depth {} too large", self.depth)));
        }
        let f = 1usize << self.depth;
        if self.grid.iter().any(|&g| g == 0 || g % f != 0) {
            return Err(Error::InvalidConfig(format!(
                "grid {:?} is not divisible by 2^{} on every axis",
                self.grid, self.depth
            )));
        }
        if self.deep_supervision && self.kind == BackboneKind::Unet {
            return Err(Error::InvalidConfig("deep supervision requires unetpp".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Single,
    Early,
    Intermediate,
    Late,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Bmode,
    Doppler,
}

impl Modality {
    /// Channel index in the stacked (bmode, doppler) input.
    pub fn channel(self) -> usize {
        match self {
            Self::Bmode => 0,
            Self::Doppler => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bmode => "bmode",
            Self::Doppler => "doppler",
        }
    }
}

/// Encoder features fed to the shared decoder's skip connections under intermediate fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipSource {
    /// Concatenated features of both encoders.
    #[default]
    Both,
    /// Features of the B-mode encoder only; the bottleneck is still fused.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionConfig {
    pub strategy: Strategy,
    /// Required for `single`, absent otherwise.
    pub modality: Option<Modality>,
    #[serde(default)]
    pub intermediate_skips: SkipSource,
}

impl FusionConfig {
    pub fn single(m: Modality) -> Self {
        Self {
            strategy: Strategy::Single,
            modality: Some(m),
            intermediate_skips: SkipSource::Both,
        }
    }

    fn of(strategy: Strategy) -> Self {
        Self {
            strategy,
            modality: None,
            intermediate_skips: SkipSource::Both,
        }
    }

    pub fn early() -> Self {
        Self::of(Strategy::Early)
    }

    pub fn intermediate() -> Self {
        Self::of(Strategy::Intermediate)
    }

    pub fn late() -> Self {
        Self::of(Strategy::Late)
    }

    /// Modalities stacked, in order, into the model input.
    pub fn modalities(&self) -> Vec<Modality> {
        match (self.strategy, self.modality) {
            (Strategy::Single, Some(m)) => vec![m],
            _ => vec![Modality::Bmode, Modality::Doppler],
        }
    }

    pub fn input_channels(&self) -> usize {
        self.modalities().len()
    }

    pub fn validate(&self) -> Result<()> {
        match (self.strategy, self.modality) {
            (Strategy::Single, None) => Err(Error::InvalidConfig(
                "single-modality fusion needs a modality".into(),
            )),
            (Strategy::Single, Some(_)) | (_, None) => Ok(()),
            (s, Some(m)) => Err(Error::InvalidConfig(format!(
                "modality {} given for {s:?} fusion",
                m.name()
            ))),
        }
    }
}

impl fmt::Display for FusionConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.strategy, self.modality) {
            (Strategy::Single, Some(m)) => write!(f, "single:{}", m.name()),
            (Strategy::Single, None) => f.write_str("single"),
            (Strategy::Early, _) => f.write_str("early"),
            (Strategy::Intermediate, _) => f.write_str("intermediate"),
            (Strategy::Late, _) => f.write_str("late"),
        }
    }
}

impl FromStr for FusionConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single:bmode" => Ok(Self::single(Modality::Bmode)),
            "single:doppler" => Ok(Self::single(Modality::Doppler)),
            "early" => Ok(Self::early()),
            "intermediate" => Ok(Self::intermediate()),
            "late" => Ok(Self::late()),
            _ => Err(Error::InvalidConfig(format!(
                "unknown fusion `{s}` (single:bmode|single:doppler|early|intermediate|late)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let u = BackboneConfig::unet();
        assert_eq!((0..=u.depth).map(|i| u.filters(i)).collect::<Vec<_>>(), [16, 32, 64, 128, 256]);
        let p = BackboneConfig::unetpp();
        assert_eq!((0..=p.depth).map(|i| p.filters(i)).collect::<Vec<_>>(), [32, 64, 128, 256, 512]);
        assert!(u.validate().is_ok() && p.validate().is_ok());
    }

    #[test]
    fn validation() {
        assert!(BackboneConfig::unet().scaled(4, 3, 12).validate().is_err());
        assert!(BackboneConfig::unet().scaled(4, 2, 12).validate().is_ok());
        assert!(BackboneConfig::unet().scaled(0, 2, 16).validate().is_err());
        assert!(BackboneConfig::unet().scaled(4, 0, 16).validate().is_err());
        let ds = BackboneConfig {
            deep_supervision: true,
            ..BackboneConfig::unet()
        };
        assert!(ds.validate().is_err());
        let bad = FusionConfig {
            modality: Some(Modality::Doppler),
            ..FusionConfig::early()
        };
        assert!(bad.validate().is_err());
        assert!(FusionConfig { modality: None, ..FusionConfig::single(Modality::Bmode) }.validate().is_err());
    }

    #[test]
    fn names_round_trip() {
        for s in ["single:bmode", "single:doppler", "early", "intermediate", "late"] {
            let f: FusionConfig = s.parse().unwrap();
            assert_eq!(f.to_string(), s);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<FusionConfig>(&json).unwrap(), f);
        }
        assert!("mid".parse::<FusionConfig>().is_err());
        assert_eq!(FusionConfig::early().input_channels(), 2);
        assert_eq!(FusionConfig::single(Modality::Doppler).modalities(), [Modality::Doppler]);
        assert_eq!("unetpp".parse::<BackboneKind>().unwrap(), BackboneKind::Unetpp);
    }
}
