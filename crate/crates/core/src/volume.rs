//! Volumes, masks and the preprocessing primitives shared by every stage.
//!
//! Arrays are indexed `[x, y, z]` and spacing is in millimetres per voxel.

use ndarray::{Array3, Zip};

use crate::error::{Error, Result};

pub type Shape = [usize; 3];
pub type Spacing = [f64; 3];

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidSpacing(spacing))
    }
}

fn check_shape(shape: Shape) -> Result<()> {
    if shape.iter().all(|&n| n >= 1) {
        Ok(())
    } else {
        Err(Error::InvalidShape(shape))
    }
}

fn dims(a: &Array3<impl Sized>) -> Shape {
    let d = a.dim();
    [d.0, d.1, d.2]
}

/// A 3D grid of finite real intensities with physical voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
    spacing: Spacing,
}

impl Volume {
    pub fn new(data: Array3<f64>, spacing: Spacing) -> Result<Self> {
        check_shape(dims(&data))?;
        check_spacing(spacing)?;
        if let Some((idx, _)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite([idx.0, idx.1, idx.2]));
        }
        Ok(Self { data, spacing })
    }

    pub fn filled(shape: Shape, spacing: Spacing, value: f64) -> Result<Self> {
        Self::new(Array3::from_elem((shape[0], shape[1], shape[2]), value), spacing)
    }

    pub fn from_fn(
        shape: Shape,
        spacing: Spacing,
        f: impl FnMut((usize, usize, usize)) -> f64,
    ) -> Result<Self> {
        Self::new(Array3::from_shape_fn((shape[0], shape[1], shape[2]), f), spacing)
    }

    pub fn shape(&self) -> Shape {
        dims(&self.data)
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Physical extent `shape[i] * spacing[i]` in mm.
    pub fn extent(&self) -> [f64; 3] {
        let s = self.shape();
        [
            s[0] as f64 * self.spacing[0],
            s[1] as f64 * self.spacing[1],
            s[2] as f64 * self.spacing[2],
        ]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Sample mean and population standard deviation.
    pub fn mean_std(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().sum::<f64>() / n;
        let var = self.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Applies `f` voxelwise, re-validating finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.data.mapv(f), self.spacing)
    }
}

/// A 3D grid with every voxel exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    data: Array3<u8>,
    spacing: Spacing,
}

impl BinaryMask {
    pub fn new(data: Array3<u8>, spacing: Spacing) -> Result<Self> {
        check_shape(dims(&data))?;
        check_spacing(spacing)?;
        if let Some((idx, v)) = data.indexed_iter().find(|(_, v)| **v > 1) {
            return Err(Error::NonBinary {
                index: [idx.0, idx.1, idx.2],
                value: f64::from(*v),
            });
        }
        Ok(Self { data, spacing })
    }

    pub fn zeros(shape: Shape, spacing: Spacing) -> Result<Self> {
        Self::new(Array3::zeros((shape[0], shape[1], shape[2])), spacing)
    }

    pub fn from_fn(
        shape: Shape,
        spacing: Spacing,
        mut f: impl FnMut((usize, usize, usize)) -> bool,
    ) -> Result<Self> {
        Self::new(
            Array3::from_shape_fn((shape[0], shape[1], shape[2]), |i| u8::from(f(i))),
            spacing,
        )
    }

    /// Builds a mask from an intensity volume whose voxels must all be exactly 0 or 1.
    pub fn from_volume(v: &Volume) -> Result<Self> {
        if let Some((idx, val)) = v
            .data()
            .indexed_iter()
            .find(|(_, val)| **val != 0.0 && **val != 1.0)
        {
            return Err(Error::NonBinary {
                index: [idx.0, idx.1, idx.2],
                value: *val,
            });
        }
        Self::new(v.data().mapv(|x| x as u8), v.spacing())
    }

    pub fn to_volume(&self) -> Volume {
        Volume {
            data: self.data.mapv(f64::from),
            spacing: self.spacing,
        }
    }

    pub fn shape(&self) -> Shape {
        dims(&self.data)
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn get(&self, idx: [usize; 3]) -> bool {
        self.data[idx] == 1
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn foreground(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        self.data
            .indexed_iter()
            .filter(|(_, v)| **v == 1)
            .map(|(i, _)| [i.0, i.1, i.2])
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }
}

/// Co-registered modalities and ground truth for one study.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub study_id: String,
    pub patient_id: String,
    pub bmode: Volume,
    pub doppler: Volume,
    pub mask: BinaryMask,
}

impl Study {
    pub fn new(
        study_id: impl Into<String>,
        patient_id: impl Into<String>,
        bmode: Volume,
        doppler: Volume,
        mask: BinaryMask,
    ) -> Result<Self> {
        let study_id = study_id.into();
        if bmode.shape() != doppler.shape() || bmode.shape() != mask.shape() {
            return Err(Error::Integrity(format!(
                "study {study_id}: shapes differ (bmode {:?}, doppler {:?}, mask {:?})",
                bmode.shape(),
                doppler.shape(),
                mask.shape()
            )));
        }
        if !spacing_close(bmode.spacing(), doppler.spacing())
            || !spacing_close(bmode.spacing(), mask.spacing())
        {
            return Err(Error::Integrity(format!(
                "study {study_id}: spacings differ (bmode {:?}, doppler {:?}, mask {:?})",
                bmode.spacing(),
                doppler.spacing(),
                mask.spacing()
            )));
        }
        Ok(Self {
            study_id,
            patient_id: patient_id.into(),
            bmode,
            doppler,
            mask,
        })
    }

    pub fn shape(&self) -> Shape {
        self.bmode.shape()
    }

    pub fn spacing(&self) -> Spacing {
        self.bmode.spacing()
    }
}

/// Relative comparison used when spacings were derived by independent arithmetic.
pub fn spacing_close(a: Spacing, b: Spacing) -> bool {
    a.iter()
        .zip(b.iter())
        .all(|(x, y)| (x - y).abs() <= 1e-6 * x.abs().max(y.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Interpolation {
    #[default]
    Trilinear,
    Nearest,
}

/// Continuous source coordinate of output voxel `i` when mapping `n_in` voxels onto `n_out`,
/// aligning voxel centres so the physical extent is preserved.
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    (i as f64 + 0.5) * (n_in as f64 / n_out as f64) - 0.5
}

fn nearest_index(i: usize, n_in: usize, n_out: usize) -> usize {
    let c = ((i as f64 + 0.5) * (n_in as f64 / n_out as f64)).floor() as usize;
    c.min(n_in - 1)
}

/// Linear interpolation weights along one axis: `(lower, upper, frac)`.
fn linear_taps(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let c = source_coord(i, n_in, n_out).clamp(0.0, (n_in - 1) as f64);
    let lo = c.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, c - lo as f64)
}

/// Resamples onto `target` voxels while preserving the physical extent.
pub fn resample(v: &Volume, target: Shape, mode: Interpolation) -> Result<Volume> {
    check_shape(target)?;
    if let Some((idx, _)) = v.data.indexed_iter().find(|(_, x)| !x.is_finite()) {
        return Err(Error::NonFinite([idx.0, idx.1, idx.2]));
    }
    let src = v.shape();
    let spacing = resampled_spacing(src, v.spacing, target);
    if src == target {
        return Volume::new(v.data.clone(), spacing);
    }
    let data = match mode {
        Interpolation::Nearest => {
            let maps: Vec<Vec<usize>> = (0..3)
                .map(|a| (0..target[a]).map(|i| nearest_index(i, src[a], target[a])).collect())
                .collect();
            Array3::from_shape_fn((target[0], target[1], target[2]), |(x, y, z)| {
                v.data[[maps[0][x], maps[1][y], maps[2][z]]]
            })
        }
        Interpolation::Trilinear => {
            let taps: Vec<Vec<(usize, usize, f64)>> = (0..3)
                .map(|a| (0..target[a]).map(|i| linear_taps(i, src[a], target[a])).collect())
                .collect();
            let d = &v.data;
            Array3::from_shape_fn((target[0], target[1], target[2]), |(x, y, z)| {
                let (x0, x1, fx) = taps[0][x];
                let (y0, y1, fy) = taps[1][y];
                let (z0, z1, fz) = taps[2][z];
                let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a + t * (b - a) };
                let c00 = lerp(d[[x0, y0, z0]], d[[x0, y0, z1]], fz);
                let c01 = lerp(d[[x0, y1, z0]], d[[x0, y1, z1]], fz);
                let c10 = lerp(d[[x1, y0, z0]], d[[x1, y0, z1]], fz);
                let c11 = lerp(d[[x1, y1, z0]], d[[x1, y1, z1]], fz);
                lerp(lerp(c00, c01, fy), lerp(c10, c11, fy), fx)
            })
        }
    };
    Volume::new(data, spacing)
}

pub fn resampled_spacing(src: Shape, spacing: Spacing, target: Shape) -> Spacing {
    if src == target {
        return spacing;
    }
    [
        spacing[0] * src[0] as f64 / target[0] as f64,
        spacing[1] * src[1] as f64 / target[1] as f64,
        spacing[2] * src[2] as f64 / target[2] as f64,
    ]
}

/// Nearest-neighbour resampling that keeps the mask binary.
pub fn resample_mask(m: &BinaryMask, target: Shape) -> Result<BinaryMask> {
    check_shape(target)?;
    let src = m.shape();
    let spacing = resampled_spacing(src, m.spacing, target);
    let maps: Vec<Vec<usize>> = (0..3)
        .map(|a| (0..target[a]).map(|i| nearest_index(i, src[a], target[a])).collect())
        .collect();
    let data = Array3::from_shape_fn((target[0], target[1], target[2]), |(x, y, z)| {
        m.data[[maps[0][x], maps[1][y], maps[2][z]]]
    });
    BinaryMask::new(data, spacing)
}

/// Result of [`normalize_unit`]; `degenerate` is set for constant input.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub volume: Volume,
    pub degenerate: bool,
}

/// Affine rescale onto `[0, 1]` via `(x - min) / (max - min)`.
///
/// A constant volume maps to all zeros and is flagged (and logged) rather than rejected.
pub fn normalize_unit(v: &Volume) -> Normalized {
    let (lo, hi) = v.min_max();
    if hi <= lo {
        log::warn!("constant volume (value {lo}) normalized to zeros");
        return Normalized {
            volume: Volume {
                data: Array3::zeros(v.data.raw_dim()),
                spacing: v.spacing,
            },
            degenerate: true,
        };
    }
    let range = hi - lo;
    Normalized {
        volume: Volume {
            data: v.data.mapv(|x| (x - lo) / range),
            spacing: v.spacing,
        },
        degenerate: false,
    }
}

/// `(x - mean) / std`.
pub fn standardize(v: &Volume, mean: f64, std: f64) -> Result<Volume> {
    if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "standardize needs finite mean and std > 0, got mean={mean} std={std}"
        )));
    }
    v.map(|x| (x - mean) / std)
}

/// Voxel is foreground iff `p >= threshold`.
pub fn binarize(p: &Volume, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut data = Array3::<u8>::zeros(p.data.raw_dim());
    Zip::from(&mut data)
        .and(&p.data)
        .for_each(|m, &x| *m = u8::from(x >= threshold));
    BinaryMask::new(data, p.spacing)
}
