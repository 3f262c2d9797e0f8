//! Volumetric data handling for multi-modal 3D segmentation.
//!
//! - [`volume`]: intensity volumes, binary masks, study bundles, resampling and normalization
//! - [`io`]: NIfTI-1/NIfTI-2 reading and writing, dataset manifests, study loading
//! - [`pipeline`]: annotator consensus, patient-grouped fold plans, affine augmentation, phantoms
//! - [`metrics`]: overlap and surface-distance metrics with aggregation and table output

pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{BinaryMask, Interpolation, Shape, Spacing, Study, Volume};
