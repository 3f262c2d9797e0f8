//! Conversion between studies and network tensors, and training-split standardization.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use fusionseg_core::volume::normalize_unit;
use fusionseg_core::{BinaryMask, Spacing, Study, Volume};
use fusionseg_nn::{Modality, Tensor};

use crate::error::{Error, Result};

/// Per-modality intensity statistics of the training split, indexed by
/// [`Modality::channel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 2],
    pub std: [f64; 2],
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; 2],
            std: [1.0; 2],
        }
    }

    /// Population mean and standard deviation over every voxel of every study.
    pub fn from_studies(studies: &[Study]) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::Config("normalization statistics of zero studies".into()));
        }
        let mut mean = [0.0; 2];
        let mut std = [0.0; 2];
        for m in [Modality::Bmode, Modality::Doppler] {
            let c = m.channel();
            let vols = studies.iter().map(|s| modality(s, m));
            let n: usize = vols.clone().map(Volume::len).sum();
            let mu = vols.clone().map(|v| v.data().sum()).sum::<f64>() / n as f64;
            let var = vols
                .map(|v| v.data().iter().map(|x| (x - mu) * (x - mu)).sum::<f64>())
                .sum::<f64>()
                / n as f64;
            mean[c] = mu;
            std[c] = if var > 1e-24 {
                var.sqrt()
            } else {
                log::warn!("{} intensities are constant over the training split", m.name());
                1.0
            };
        }
        Ok(Self { mean, std })
    }
}

pub fn modality(s: &Study, m: Modality) -> &Volume {
    match m {
        Modality::Bmode => &s.bmode,
        Modality::Doppler => &s.doppler,
    }
}

/// Standardized channels of `study`, stacked in `modalities` order, shape `(1, C, x, y, z)`.
pub fn input_tensor(study: &Study, modalities: &[Modality], stats: &NormStats) -> Tensor {
    let [nx, ny, nz] = study.shape();
    let mut data = Vec::with_capacity(modalities.len() * nx * ny * nz);
    for &m in modalities {
        let c = m.channel();
        let (mu, sd) = (stats.mean[c], stats.std[c]);
        data.extend(modality(study, m).data().iter().map(|v| (v - mu) / sd));
    }
    Tensor::new(vec![1, modalities.len(), nx, ny, nz], data).expect("sizes agree")
}

/// Rescales both modalities to `[0, 1]`, as the loader does for studies read from disk.
pub fn unit_scaled(study: &Study) -> Result<Study> {
    let b = normalize_unit(&study.bmode).volume;
    let d = normalize_unit(&study.doppler).volume;
    Ok(Study::new(&study.study_id, &study.patient_id, b, d, study.mask.clone())?)
}

/// 0/1 target of shape `(1, 1, x, y, z)`.
pub fn target_tensor(mask: &BinaryMask) -> Tensor {
    let [nx, ny, nz] = mask.shape();
    let data = mask.data().iter().map(|&v| f64::from(v)).collect();
    Tensor::new(vec![1, 1, nx, ny, nz], data).expect("sizes agree")
}

/// Batch item `i`, channel 0 of a 5-D tensor as a volume.
pub fn tensor_to_volume(t: &Tensor, i: usize, spacing: Spacing) -> Result<Volume> {
    let (_, c, [nx, ny, nz]) = t.dims5()?;
    let v = nx * ny * nz;
    let start = i * c * v;
    let arr = Array3::from_shape_vec((nx, ny, nz), t.data()[start..start + v].to_vec())
        .expect("sizes agree");
    Ok(Volume::new(arr, spacing)?)
}
