//! Random affine augmentation applied identically to every channel of a study.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;
use rand::Rng;

use crate::error::Result;
use crate::volume::{BinaryMask, Interpolation, Shape, Study, Volume};

/// Sampling ranges. Translation and shear are in voxels, rotation in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub max_translation: f64,
    pub max_rotation_deg: f64,
    pub scale_range: (f64, f64),
    pub max_shear: f64,
}

impl Default for AugmentConfig {
    /// Ranges for a 64-voxel grid.
    fn default() -> Self {
        Self {
            max_translation: 10.0,
            max_rotation_deg: 10.0,
            scale_range: (0.9, 1.1),
            max_shear: 15.0,
        }
    }
}

impl AugmentConfig {
    /// Rescales the voxel-valued ranges from a 64-voxel grid to `grid` voxels.
    pub fn scaled_to_grid(&self, grid: usize) -> Self {
        let f = grid as f64 / 64.0;
        Self {
            max_translation: self.max_translation * f,
            max_shear: self.max_shear * f,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub translation: [f64; 3],
    pub rotation_deg: [f64; 3],
    pub scale: [f64; 3],
    /// Displacement along axis `i`, in voxels, at the grid boundary of axis `(i + 1) % 3`.
    pub shear: [f64; 3],
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineParams {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation_deg: [0.0; 3],
            scale: [1.0; 3],
            shear: [0.0; 3],
        }
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Linear part of the forward map about the grid centre.
    pub fn linear(&self, shape: Shape) -> Matrix3<f64> {
        let [ax, ay, az] = self.rotation_deg.map(f64::to_radians);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ax.cos(), -ax.sin(), 0.0, ax.sin(), ax.cos());
        let ry = Matrix3::new(ay.cos(), 0.0, ay.sin(), 0.0, 1.0, 0.0, -ay.sin(), 0.0, ay.cos());
        let rz = Matrix3::new(az.cos(), -az.sin(), 0.0, az.sin(), az.cos(), 0.0, 0.0, 0.0, 1.0);
        let scale = Matrix3::from_diagonal(&Vector3::from(self.scale));
        let mut shear = Matrix3::identity();
        for i in 0..3 {
            let j = (i + 1) % 3;
            let half = (shape[j] as f64 / 2.0).max(1.0);
            shear[(i, j)] = self.shear[i] / half;
        }
        rz * ry * rx * scale * shear
    }

    /// Maps an input voxel coordinate to its output location.
    pub fn forward_point(&self, shape: Shape, p: [f64; 3]) -> [f64; 3] {
        let c = centre(shape);
        let q = self.linear(shape) * (Vector3::from(p) - c) + c + Vector3::from(self.translation);
        [q[0], q[1], q[2]]
    }
}

fn centre(shape: Shape) -> Vector3<f64> {
    Vector3::new(
        (shape[0] as f64 - 1.0) / 2.0,
        (shape[1] as f64 - 1.0) / 2.0,
        (shape[2] as f64 - 1.0) / 2.0,
    )
}

/// Draws every parameter independently and uniformly from its range.
pub fn sample_affine<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> AffineParams {
    let mut sym = |r: f64| if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
    let translation = [0; 3].map(|_| sym(cfg.max_translation));
    let rotation_deg = [0; 3].map(|_| sym(cfg.max_rotation_deg));
    let shear = [0; 3].map(|_| sym(cfg.max_shear));
    let (lo, hi) = cfg.scale_range;
    let scale = [0; 3].map(|_| if hi > lo { rng.random_range(lo..=hi) } else { lo });
    AffineParams {
        translation,
        rotation_deg,
        scale,
        shear,
    }
}

/// Inverse map: for every output voxel, the input coordinate it samples.
struct Sampler {
    inv: Matrix3<f64>,
    c: Vector3<f64>,
    t: Vector3<f64>,
}

impl Sampler {
    fn new(shape: Shape, p: &AffineParams) -> Self {
        let inv = p
            .linear(shape)
            .try_inverse()
            .unwrap_or_else(Matrix3::identity);
        Self {
            inv,
            c: centre(shape),
            t: Vector3::from(p.translation),
        }
    }

    fn source(&self, x: usize, y: usize, z: usize) -> Vector3<f64> {
        let out = Vector3::new(x as f64, y as f64, z as f64);
        self.inv * (out - self.c - self.t) + self.c
    }
}

fn trilinear_zero(d: &Array3<f64>, p: Vector3<f64>) -> f64 {
    let (nx, ny, nz) = d.dim();
    let base = [p[0].floor(), p[1].floor(), p[2].floor()];
    let frac = [p[0] - base[0], p[1] - base[1], p[2] - base[2]];
    let mut acc = 0.0;
    for corner in 0..8 {
        let off = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
        let mut w = 1.0;
        let mut idx = [0usize; 3];
        let mut inside = true;
        for a in 0..3 {
            let wa = if off[a] == 1 { frac[a] } else { 1.0 - frac[a] };
            w *= wa;
            let i = base[a] + off[a] as f64;
            let n = [nx, ny, nz][a] as f64;
            if i < 0.0 || i >= n {
                inside = false;
            } else {
                idx[a] = i as usize;
            }
        }
        if inside && w != 0.0 {
            acc += w * d[idx];
        }
    }
    acc
}

fn nearest_zero<T: Copy + Default>(d: &Array3<T>, p: Vector3<f64>) -> T {
    let (nx, ny, nz) = d.dim();
    let r = [p[0].round(), p[1].round(), p[2].round()];
    let n = [nx as f64, ny as f64, nz as f64];
    if (0..3).all(|a| r[a] >= 0.0 && r[a] < n[a]) {
        d[[r[0] as usize, r[1] as usize, r[2] as usize]]
    } else {
        T::default()
    }
}

/// Warps an intensity volume; samples outside the field of view read as 0.
pub fn warp_volume(v: &Volume, p: &AffineParams, mode: Interpolation) -> Result<Volume> {
    let shape = v.shape();
    let s = Sampler::new(shape, p);
    let d = v.data();
    let out = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(x, y, z)| {
        let src = s.source(x, y, z);
        match mode {
            Interpolation::Trilinear => trilinear_zero(d, src),
            Interpolation::Nearest => nearest_zero(d, src),
        }
    });
    Volume::new(out, v.spacing())
}

/// Nearest-neighbour warp that keeps the mask binary.
pub fn warp_mask(m: &BinaryMask, p: &AffineParams) -> Result<BinaryMask> {
    let shape = m.shape();
    let s = Sampler::new(shape, p);
    let d = m.data();
    let out = Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(x, y, z)| {
        nearest_zero(d, s.source(x, y, z))
    });
    BinaryMask::new(out, m.spacing())
}

/// Applies one transform to both modalities (trilinear) and the mask (nearest).
pub fn apply_affine(study: &Study, p: &AffineParams) -> Result<Study> {
    Study::new(
        study.study_id.clone(),
        study.patient_id.clone(),
        warp_volume(&study.bmode, p, Interpolation::Trilinear)?,
        warp_volume(&study.doppler, p, Interpolation::Trilinear)?,
        warp_mask(&study.mask, p)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn study(shape: Shape, seed: u64) -> Study {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Volume::from_fn(shape, [1.0; 3], |_| rng.random::<f64>()).unwrap();
        let d = Volume::from_fn(shape, [1.0; 3], |_| rng.random::<f64>()).unwrap();
        let m = BinaryMask::from_fn(shape, [1.0; 3], |_| rng.random_bool(0.3)).unwrap();
        Study::new("s", "p", b, d, m).unwrap()
    }

    #[test]
    fn identity_leaves_study_unchanged() {
        let s = study([7, 6, 5], 1);
        let out = apply_affine(&s, &AffineParams::identity()).unwrap();
        assert_eq!(out.mask, s.mask);
        for (a, b) in out.bmode.data().iter().zip(s.bmode.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for (a, b) in out.doppler.data().iter().zip(s.doppler.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn unit_translation_moves_single_voxel() {
        let m = BinaryMask::from_fn([8, 8, 8], [1.0; 3], |i| i == (3, 4, 5)).unwrap();
        let out = warp_mask(&m, &AffineParams::translation([1.0, 0.0, 0.0])).unwrap();
        assert_eq!(out.count(), 1);
        assert!(out.get([4, 4, 5]));
    }

    #[test]
    fn marker_positions_coincide_across_channels() {
        let shape = [10, 9, 8];
        let marker = [4usize, 3, 5];
        let b = Volume::from_fn(shape, [1.0; 3], |i| f64::from(u8::from(i == (4, 3, 5)))).unwrap();
        let m = BinaryMask::from_fn(shape, [1.0; 3], |i| i == (4, 3, 5)).unwrap();
        let s = Study::new("s", "p", b.clone(), b, m).unwrap();
        for t in [[2.0, -1.0, 0.0], [-3.0, 2.0, 1.0], [0.0, 0.0, -2.0]] {
            let p = AffineParams::translation(t);
            let expect = p.forward_point(shape, marker.map(|v| v as f64));
            let out = apply_affine(&s, &p).unwrap();
            let mask_at: Vec<[usize; 3]> = out.mask.foreground().collect();
            let peak = out
                .bmode
                .data()
                .indexed_iter()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| [i.0, i.1, i.2])
                .unwrap();
            assert_eq!(mask_at, vec![expect.map(|v| v.round() as usize)]);
            assert_eq!(peak, mask_at[0]);
        }
    }

    #[test]
    fn out_of_field_is_zero() {
        let v = Volume::filled([6, 6, 6], [1.0; 3], 1.0).unwrap();
        let out = warp_volume(&v, &AffineParams::translation([2.0, 0.0, 0.0]), Interpolation::Trilinear)
            .unwrap();
        assert_eq!(out.data()[[0, 3, 3]], 0.0);
        assert_eq!(out.data()[[1, 3, 3]], 0.0);
        assert_eq!(out.data()[[2, 3, 3]], 1.0);
    }

    #[test]
    fn sampling_respects_ranges_and_seed() {
        let cfg = AugmentConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let p = sample_affine(&cfg, &mut rng);
            for a in 0..3 {
                assert!(p.translation[a].abs() <= 10.0);
                assert!(p.rotation_deg[a].abs() <= 10.0);
                assert!((0.9..=1.1).contains(&p.scale[a]));
                assert!(p.shear[a].abs() <= 15.0);
            }
        }
        let a = sample_affine(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_affine(&cfg, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let small = cfg.scaled_to_grid(16);
        assert_eq!(small.max_translation, 2.5);
        assert_eq!(small.max_shear, 3.75);
        assert_eq!(small.max_rotation_deg, 10.0);
    }

    proptest! {
        #[test]
        fn sampled_transforms_preserve_invariants(seed in 0u64..500) {
            let s = study([8, 8, 8], seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = sample_affine(&AugmentConfig::default().scaled_to_grid(8), &mut rng);
            let out = apply_affine(&s, &p).unwrap();
            prop_assert_eq!(out.shape(), s.shape());
            prop_assert_eq!(out.spacing(), s.spacing());
            prop_assert!(out.mask.data().iter().all(|&v| v <= 1));
            prop_assert!(out.bmode.data().iter().all(|v| v.is_finite()));
        }
    }
}
