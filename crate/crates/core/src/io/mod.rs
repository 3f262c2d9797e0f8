//! File formats and study ingestion.

mod manifest;
pub mod nifti;

use std::path::Path;

pub use manifest::{DatasetManifest, ManifestEntry};
pub use nifti::{read_mask, read_volume, write_mask, write_volume};

use crate::error::{Error, Result};
use crate::pipeline::consensus_mask;
use crate::volume::{
    normalize_unit, resample, resample_mask, spacing_close, Interpolation, Shape, Study,
};

/// Preprocessing applied while loading a study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub grid: Shape,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { grid: [64, 64, 64] }
    }
}

/// Reads one manifest entry, builds the consensus mask, resamples every volume onto the
/// configured grid and rescales both modalities to `[0, 1]`.
pub fn load_study(manifest: &DatasetManifest, entry: &ManifestEntry, opts: &LoadOptions) -> Result<Study> {
    let bmode = read_volume(manifest.resolve(&entry.bmode))?;
    let doppler = read_volume(manifest.resolve(&entry.doppler))?;
    let masks = entry
        .masks
        .iter()
        .map(|p| read_mask(manifest.resolve(p)))
        .collect::<Result<Vec<_>>>()?;
    let mask = consensus_mask(&masks)?;

    let bmode = resample(&bmode, opts.grid, Interpolation::Trilinear)?;
    let doppler = resample(&doppler, opts.grid, Interpolation::Trilinear)?;
    let mask = resample_mask(&mask, opts.grid)?;
    for (name, sp) in [("doppler", doppler.spacing()), ("mask", mask.spacing())] {
        if !spacing_close(bmode.spacing(), sp) {
            return Err(Error::Integrity(format!(
                "study {}: {name} spacing {sp:?} differs from bmode {:?} after resampling",
                entry.study_id,
                bmode.spacing()
            )));
        }
    }

    let bmode = normalize_unit(&bmode);
    let doppler = normalize_unit(&doppler);
    if bmode.degenerate || doppler.degenerate {
        log::warn!("study {}: constant modality volume", entry.study_id);
    }
    // Align spacing bit-exactly so downstream shape/spacing checks are strict.
    let spacing = bmode.volume.spacing();
    let doppler = crate::volume::Volume::new(doppler.volume.into_data(), spacing)?;
    let mask = crate::volume::BinaryMask::new(mask.data().clone(), spacing)?;
    Study::new(&entry.study_id, &entry.patient_id, bmode.volume, doppler, mask)
}

/// Loads every study of a manifest.
pub fn load_all(manifest: &DatasetManifest, opts: &LoadOptions) -> Result<Vec<Study>> {
    manifest.entries().iter().map(|e| load_study(manifest, e, opts)).collect()
}

/// Writes `bmode`, `doppler` and `mask1` of a study into `dir` and returns the manifest entry
/// with paths relative to `base`.
pub fn write_study(study: &Study, dir: &Path, base: &Path) -> Result<ManifestEntry> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let b = dir.join("bmode.nii.gz");
    let d = dir.join("doppler.nii.gz");
    let m = dir.join("mask1.nii.gz");
    write_volume(&study.bmode, &b)?;
    write_volume(&study.doppler, &d)?;
    write_mask(&study.mask, &m)?;
    let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
    Ok(ManifestEntry {
        study_id: study.study_id.clone(),
        patient_id: study.patient_id.clone(),
        bmode: rel(&b),
        doppler: rel(&d),
        masks: vec![rel(&m)],
    })
}

/// File name of the manifest written by [`write_dataset`].
pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Writes every study into `dir/<study_id>/` and a manifest with relative paths to
/// `dir/manifest.tsv`.
pub fn write_dataset(studies: &[Study], dir: &Path) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries = studies
        .iter()
        .map(|s| write_study(s, &dir.join(&s.study_id), dir))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(entries, dir)?;
    manifest.save(dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

