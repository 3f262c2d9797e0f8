use ndarray::{Array3, Axis};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Spacing};

const NEIGHBOURS: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Foreground voxels with at least one background 6-neighbour; neighbours outside the grid
/// count as background.
pub fn surface_voxels(m: &BinaryMask) -> Result<Vec<[usize; 3]>> {
    if m.is_blank() {
        return Err(Error::EmptyStructure("surface of an empty mask".into()));
    }
    let s = m.shape();
    let d = m.data();
    Ok(m.foreground()
        .filter(|p| {
            NEIGHBOURS.iter().any(|o| {
                let q = [
                    p[0] as isize + o[0],
                    p[1] as isize + o[1],
                    p[2] as isize + o[2],
                ];
                (0..3).any(|a| q[a] < 0 || q[a] >= s[a] as isize)
                    || d[[q[0] as usize, q[1] as usize, q[2] as usize]] == 0
            })
        })
        .collect())
}

/// Exact squared Euclidean distance transform to the `sites` set with anisotropic spacing,
/// computed one axis at a time with lower envelopes of parabolas.
fn squared_distance_to(shape: [usize; 3], spacing: Spacing, sites: &[[usize; 3]]) -> Array3<f64> {
    let mut f = Array3::from_elem((shape[0], shape[1], shape[2]), f64::INFINITY);
    for p in sites {
        f[*p] = 0.0;
    }
    let longest = *shape.iter().max().unwrap();
    let mut buf = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for axis in 0..3 {
        let s = spacing[axis];
        for mut lane in f.lanes_mut(Axis(axis)) {
            let n = lane.len();
            for (b, x) in buf.iter_mut().zip(lane.iter()) {
                *b = *x;
            }
            envelope(&buf[..n], s, &mut out[..n], &mut v, &mut z);
            for (x, o) in lane.iter_mut().zip(out.iter()) {
                *x = *o;
            }
        }
    }
    f
}

fn envelope(f: &[f64], s: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let pos = |i: usize| i as f64 * s;
    let mut k: isize = -1;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let x = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
            if x <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = x;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < pos(q) {
            j += 1;
        }
        let d = pos(q) - pos(v[j]);
        *o = d * d + f[v[j]];
    }
}

/// Distances (mm) from every surface voxel of `from` to the nearest surface voxel of `to`.
pub fn directed_distances(from: &BinaryMask, to: &BinaryMask) -> Result<Vec<f64>> {
    check_pair(from, to)?;
    let src = surface_voxels(from)?;
    let dst = surface_voxels(to)?;
    let dt = squared_distance_to(to.shape(), to.spacing(), &dst);
    Ok(src.iter().map(|p| dt[*p].sqrt()).collect())
}

fn check_pair(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    if a.shape() != b.shape() || a.spacing() != b.spacing() {
        return Err(Error::Mismatch(format!(
            "masks {:?}/{:?} and {:?}/{:?}",
            a.shape(),
            a.spacing(),
            b.shape(),
            b.spacing()
        )));
    }
    Ok(())
}

/// Linear-interpolation percentile (`q` in `[0, 100]`) of unsorted values.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    v[lo] + (rank - lo as f64) * (v[hi] - v[lo])
}

/// Both directed surface distance lists of a mask pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceDistances {
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

impl SurfaceDistances {
    pub fn new(a: &BinaryMask, b: &BinaryMask) -> Result<Self> {
        Ok(Self {
            a_to_b: directed_distances(a, b)?,
            b_to_a: directed_distances(b, a)?,
        })
    }

    pub fn hd95(&self) -> f64 {
        percentile(&self.a_to_b, 95.0).max(percentile(&self.b_to_a, 95.0))
    }

    pub fn hausdorff(&self) -> f64 {
        let m = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
        m(&self.a_to_b).max(m(&self.b_to_a))
    }

    pub fn msd(&self) -> f64 {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        0.5 * (mean(&self.a_to_b) + mean(&self.b_to_a))
    }
}

/// Larger of the two directed 95th-percentile surface distances, in mm.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(SurfaceDistances::new(a, b)?.hd95())
}

/// Classic (maximum) Hausdorff distance between surfaces, in mm.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(SurfaceDistances::new(a, b)?.hausdorff())
}

/// Mean of the two directed mean surface distances, in mm.
pub fn msd(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    Ok(SurfaceDistances::new(a, b)?.msd())
}
