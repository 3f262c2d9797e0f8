//! Synthetic dual-modality phantoms.
//!
//! The tissue is an ellipsoidal shell. With a cut plane set, only the half of the shell on
//! one side of a plane through its centre is the target; the other half is a decoy wall of
//! identical appearance in B-mode. The B-mode-like channel shows all tissue as bright,
//! speckled texture and adds look-alike bright blobs outside the shell. The Doppler-like
//! channel shows vessel blobs seeded inside the target plus flow blobs elsewhere. Neither
//! channel alone delineates the target; together they do.

use ndarray::Array3;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Shape, Spacing, Study, Volume};

const TISSUE: f64 = 0.8;
const BACKGROUND: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub study_id: String,
    pub patient_id: String,
    pub shape: Shape,
    pub spacing: Spacing,
    /// Shell centre in voxel coordinates.
    pub center: [f64; 3],
    /// Outer semi-axes in voxels.
    pub radii: [f64; 3],
    /// Shell thickness in voxels (inner semi-axes are `radii - thickness`).
    pub thickness: f64,
    /// Standard deviation of the multiplicative B-mode speckle.
    pub speckle: f64,
    pub vessel_blobs: usize,
    pub vessel_radius: f64,
    /// Bright B-mode blobs outside the shell.
    pub confounders: usize,
    /// Doppler flow blobs outside the shell.
    pub doppler_confounders: usize,
    pub confounder_radius: f64,
    /// Normal of the plane through the centre that splits the shell into target
    /// (non-negative side) and decoy wall; `None` makes the whole shell the target.
    pub cut_normal: Option<[f64; 3]>,
    pub seed: u64,
}

impl PhantomSpec {
    /// Checks the noise level, cut plane and that the shell lies inside the grid.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.shape.iter().any(|&n| n < 2) {
            return bad(format!("phantom grid {:?} too small", self.shape));
        }
        if !(self.speckle >= 0.0) {
            return bad(format!("noise level {} must be >= 0", self.speckle));
        }
        if let Some(n) = self.cut_normal {
            if !(n.iter().map(|v| v * v).sum::<f64>() > 0.0) {
                return bad("cut normal must be non-zero".into());
            }
        }
        if !(self.thickness > 0.0) || self.radii.iter().any(|&r| r <= self.thickness) {
            return bad(format!(
                "thickness {} must be positive and below every radius {:?}",
                self.thickness, self.radii
            ));
        }
        for a in 0..3 {
            let lo = self.center[a] - self.radii[a];
            let hi = self.center[a] + self.radii[a];
            if lo < 0.0 || hi > (self.shape[a] - 1) as f64 {
                return bad(format!(
                    "shell exceeds the grid on axis {a}: [{lo}, {hi}] not within [0, {}]",
                    self.shape[a] - 1
                ));
            }
        }
        Ok(())
    }

    fn ellipsoid_r2(&self, p: [f64; 3], radii: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / radii[a]).powi(2))
            .sum()
    }

    pub fn in_shell(&self, idx: (usize, usize, usize)) -> bool {
        let p = [idx.0 as f64, idx.1 as f64, idx.2 as f64];
        let inner = self.radii.map(|r| r - self.thickness);
        self.ellipsoid_r2(p, self.radii) <= 1.0 && self.ellipsoid_r2(p, inner) > 1.0
    }

    /// Shell voxel on the target side of the cut plane.
    pub fn in_target(&self, idx: (usize, usize, usize)) -> bool {
        let p = [idx.0 as f64, idx.1 as f64, idx.2 as f64];
        self.in_shell(idx)
            && self
                .cut_normal
                .is_none_or(|n| (0..3).map(|a| (p[a] - self.center[a]) * n[a]).sum::<f64>() >= 0.0)
    }
}

fn dist2(a: [usize; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] as f64 - b[i]).powi(2)).sum()
}

fn idx3(i: (usize, usize, usize)) -> [usize; 3] {
    [i.0, i.1, i.2]
}

/// Voxels farther than `margin` from every listed foreground voxel.
fn outside_margin(mask: &Array3<u8>, inside: &[[usize; 3]], margin: f64) -> Vec<[usize; 3]> {
    let (nx, ny, nz) = mask.dim();
    let dims = [nx, ny, nz];
    let reach = margin.floor() as isize;
    let mut near = Array3::from_elem(mask.raw_dim(), false);
    for &q in inside {
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if ((dx * dx + dy * dy + dz * dz) as f64) > margin * margin {
                        continue;
                    }
                    let p = [q[0] as isize + dx, q[1] as isize + dy, q[2] as isize + dz];
                    if (0..3).all(|a| p[a] >= 0 && p[a] < dims[a] as isize) {
                        near[[p[0] as usize, p[1] as usize, p[2] as usize]] = true;
                    }
                }
            }
        }
    }
    near.indexed_iter()
        .filter(|(_, &n)| !n)
        .map(|(i, _)| idx3(i))
        .collect()
}

/// Places `count` blob centres among `candidates`, returning their coordinates.
fn pick_centres(rng: &mut ChaCha8Rng, candidates: &[[usize; 3]], count: usize) -> Vec<[f64; 3]> {
    (0..count)
        .filter_map(|_| candidates.choose(rng).map(|c| c.map(|v| v as f64)))
        .collect()
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Study> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sh = (spec.shape[0], spec.shape[1], spec.shape[2]);
    let shell = Array3::from_shape_fn(sh, |i| u8::from(spec.in_shell(i)));
    let mask = Array3::from_shape_fn(sh, |i| u8::from(spec.in_target(i)));

    let wall: Vec<[usize; 3]> = shell
        .indexed_iter()
        .filter(|(_, &m)| m == 1)
        .map(|(i, _)| idx3(i))
        .collect();
    let inside: Vec<[usize; 3]> = mask
        .indexed_iter()
        .filter(|(_, &m)| m == 1)
        .map(|(i, _)| idx3(i))
        .collect();
    // Confounders sit at least one blob radius away from the shell.
    let keep_out = spec.confounder_radius + 1.0;
    let far = outside_margin(&shell, &wall, keep_out);

    let bmode_blobs = pick_centres(&mut rng, &far, spec.confounders);
    let r_conf = spec.confounder_radius;
    let doppler_far: Vec<[usize; 3]> = far
        .iter()
        .copied()
        .filter(|&p| bmode_blobs.iter().all(|&c| dist2(p, c) > (2.0 * r_conf + 1.0).powi(2)))
        .collect();
    let flow_blobs = pick_centres(&mut rng, &doppler_far, spec.doppler_confounders);
    let vessels = pick_centres(&mut rng, &inside, spec.vessel_blobs);

    let speckle = Normal::new(0.0, spec.speckle.max(0.0)).expect("finite std");
    let mut bmode = Array3::from_elem(sh, BACKGROUND);
    for (i, b) in bmode.indexed_iter_mut() {
        let p = idx3(i);
        let tissue = shell[i] == 1 || bmode_blobs.iter().any(|&c| dist2(p, c) <= r_conf * r_conf);
        if tissue {
            *b = TISSUE;
        }
        if spec.speckle > 0.0 {
            *b *= (1.0 + speckle.sample(&mut rng)).max(0.0);
        }
    }

    let mut doppler = Array3::<f64>::zeros(sh);
    let two_s2 = |r: f64| 2.0 * r * r;
    for (i, d) in doppler.indexed_iter_mut() {
        let p = idx3(i);
        let flow: f64 = vessels
            .iter()
            .map(|&c| (-dist2(p, c) / two_s2(spec.vessel_radius)).exp())
            .chain(flow_blobs.iter().map(|&c| (-dist2(p, c) / two_s2(r_conf)).exp()))
            .sum();
        let noise = if spec.speckle > 0.0 {
            0.1 * spec.speckle * speckle.sample(&mut rng).abs()
        } else {
            0.0
        };
        *d = flow.min(1.0) + noise;
    }

    Study::new(
        spec.study_id.clone(),
        spec.patient_id.clone(),
        Volume::new(bmode, spec.spacing)?,
        Volume::new(doppler, spec.spacing)?,
        BinaryMask::new(mask, spec.spacing)?,
    )
}

/// Draws per-study phantom parameters for a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomDatasetConfig {
    pub count: usize,
    pub grid: usize,
    pub spacing: Spacing,
    pub seed: u64,
    /// Outer semi-axis range as a fraction of the grid size.
    pub radius_range: (f64, f64),
    /// Shell thickness as a fraction of the grid size (at least 1.5 voxels).
    pub thickness_fraction: f64,
    pub speckle: f64,
    pub vessel_blobs: usize,
    pub vessel_radius: f64,
    pub confounders: usize,
    pub doppler_confounders: usize,
    pub confounder_radius: f64,
    /// Split every shell into target and decoy halves along a random plane.
    pub decoy_wall: bool,
}

impl Default for PhantomDatasetConfig {
    fn default() -> Self {
        Self::for_grid(64, 10, 0)
    }
}

impl PhantomDatasetConfig {
    /// Defaults whose blob sizes and counts scale with the grid.
    pub fn for_grid(grid: usize, count: usize, seed: u64) -> Self {
        let g = grid as f64;
        Self {
            count,
            grid,
            spacing: [1.0; 3],
            seed,
            radius_range: (0.25, 0.36),
            thickness_fraction: 0.14,
            speckle: 0.25,
            vessel_blobs: 24,
            vessel_radius: (g / 16.0).max(0.8),
            confounders: 3,
            doppler_confounders: 3,
            confounder_radius: (g / 9.0).max(1.2),
            decoy_wall: true,
        }
    }

    /// Validates every study's phantom parameters without generating volumes.
    pub fn validate(&self) -> Result<()> {
        (0..self.count).try_for_each(|i| self.spec(i).validate())
    }

    pub fn thickness(&self) -> f64 {
        (self.thickness_fraction * self.grid as f64).max(1.5)
    }

    pub fn spec(&self, index: usize) -> PhantomSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let g = self.grid as f64;
        let (lo, hi) = self.radius_range;
        let radii = [0; 3].map(|_| rng.random_range(lo..=hi) * g);
        let center = [0, 1, 2].map(|a| {
            let min = radii[a];
            let max = g - 1.0 - radii[a];
            if max > min {
                rng.random_range(min..=max)
            } else {
                (g - 1.0) / 2.0
            }
        });
        let cut_normal = self.decoy_wall.then(|| {
            let n: [f64; 3] = [0; 3].map(|_| StandardNormal.sample(&mut rng));
            let len = n.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            n.map(|v| v / len)
        });
        PhantomSpec {
            study_id: format!("ph{index:04}"),
            patient_id: format!("pt{index:04}"),
            shape: [self.grid; 3],
            spacing: self.spacing,
            center,
            radii,
            thickness: self.thickness(),
            speckle: self.speckle,
            vessel_blobs: self.vessel_blobs,
            vessel_radius: self.vessel_radius,
            confounders: self.confounders,
            doppler_confounders: self.doppler_confounders,
            confounder_radius: self.confounder_radius,
            cut_normal,
            seed: rng.random(),
        }
    }
}

pub fn generate_dataset(cfg: &PhantomDatasetConfig) -> Result<Vec<Study>> {
    (0..cfg.count).map(|i| generate_phantom(&cfg.spec(i))).collect()
}

/// Analytic mask volume fraction bounds of a continuous shell over the configured radius range.
/// A plane through the centre halves the shell exactly, by point symmetry.
pub fn shell_fraction_bounds(cfg: &PhantomDatasetConfig) -> (f64, f64) {
    let g = cfg.grid as f64;
    let t = cfg.thickness();
    let part = if cfg.decoy_wall { 0.5 } else { 1.0 };
    let shell = |r: f64| {
        part * 4.0 / 3.0 * std::f64::consts::PI * (r.powi(3) - (r - t).powi(3)) / g.powi(3)
    };
    (shell(cfg.radius_range.0 * g), shell(cfg.radius_range.1 * g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::binarize;

    fn spec() -> PhantomSpec {
        let mut s = PhantomDatasetConfig::for_grid(24, 1, 5).spec(0);
        s.speckle = 0.0;
        s.confounders = 0;
        s.doppler_confounders = 0;
        s.cut_normal = None;
        s
    }

    #[test]
    fn noiseless_bmode_threshold_recovers_mask() {
        let s = generate_phantom(&spec()).unwrap();
        assert!(s.mask.count() > 0);
        assert_eq!(binarize(&s.bmode, 0.5).unwrap(), s.mask);
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = PhantomDatasetConfig::for_grid(16, 3, 11);
        assert_eq!(generate_dataset(&cfg).unwrap(), generate_dataset(&cfg).unwrap());
        let other = PhantomDatasetConfig { seed: 12, ..cfg.clone() };
        assert_ne!(generate_dataset(&cfg).unwrap(), generate_dataset(&other).unwrap());
    }

    #[test]
    fn shell_outside_grid_is_rejected() {
        let mut s = spec();
        s.center[1] = 1.0;
        assert!(matches!(generate_phantom(&s), Err(Error::InvalidArgument(_))));
        let mut s = spec();
        s.speckle = -1.0;
        assert!(generate_phantom(&s).is_err());
        let mut s = spec();
        s.cut_normal = Some([0.0; 3]);
        assert!(generate_phantom(&s).is_err());
    }

    #[test]
    fn each_channel_alone_is_ambiguous() {
        let cfg = PhantomDatasetConfig::for_grid(24, 4, 2);
        for i in 0..cfg.count {
            let s = generate_phantom(&cfg.spec(i)).unwrap();
            let clean = generate_phantom(&PhantomSpec { speckle: 0.0, ..cfg.spec(i) }).unwrap();
            let bright = binarize(&clean.bmode, 0.5).unwrap();
            // look-alike tissue outside the target, none missing inside
            assert!(bright.count() > 2 * s.mask.count());
            assert!(s.mask.foreground().all(|p| bright.get(p)));
            let spec = cfg.spec(i);
            let decoy = s
                .mask
                .data()
                .indexed_iter()
                .filter(|(p, &m)| m == 0 && spec.in_shell(*p))
                .count();
            assert!(decoy > s.mask.count() / 2);

            let (mut din, mut nin, mut dout, mut nout) = (0.0, 0.0, 0.0, 0.0);
            for (i, &m) in s.mask.data().indexed_iter() {
                let d = s.doppler.data()[i];
                if m == 1 {
                    din += d;
                    nin += 1.0;
                } else {
                    dout += d;
                    nout += 1.0;
                }
            }
            assert!(din / nin > 3.0 * dout / nout);
            // flow blobs outside the shell
            let strong_outside = s
                .doppler
                .data()
                .indexed_iter()
                .filter(|(i, &d)| d > 0.5 && s.mask.data()[*i] == 0)
                .count();
            assert!(strong_outside > 0);
        }
    }

    #[test]
    fn mask_fraction_within_analytic_bounds() {
        let cfg = PhantomDatasetConfig::for_grid(64, 100, 17);
        let (lo, hi) = shell_fraction_bounds(&cfg);
        // Voxelised ellipsoids deviate from the continuous volume near the surfaces.
        let (lo, hi) = (lo * 0.85, hi * 1.15);
        for i in 0..cfg.count {
            let spec = cfg.spec(i);
            let sh = (64, 64, 64);
            let count = ndarray::Array3::from_shape_fn(sh, |p| spec.in_target(p))
                .iter()
                .filter(|&&b| b)
                .count();
            let f = count as f64 / 64f64.powi(3);
            assert!(f >= lo && f <= hi, "study {i}: fraction {f} outside [{lo}, {hi}]");
        }
    }
}
