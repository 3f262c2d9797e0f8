//! Volumetric segmentation networks: 3D U-Net and U-Net++ backbones, single-modality and
//! early, intermediate and late fusion topologies, on a small `f64` reverse-mode autograd.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod graph;
pub mod layers;
pub mod model;
pub mod params;
pub mod tensor;

pub use checkpoint::{file_digest, load_checkpoint, parameter_digest, save_checkpoint};
pub use config::{BackboneConfig, BackboneKind, BnOrder, FusionConfig, Modality, SkipSource, Strategy};
pub use error::{Error, Result};
pub use graph::Graph;
pub use model::{build_fused, build_unet, build_unetpp, fuse_decisions, Outputs, SegModel, TrainStep};
pub use params::{BufferUpdate, ParamStore};
pub use tensor::Tensor;
