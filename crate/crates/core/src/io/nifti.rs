//! NIfTI-1 / NIfTI-2 reading and writing.
//!
//! Both header versions and both byte orders are accepted on read; gzip input is detected
//! from its magic bytes. Writers emit little-endian single-file (`n+1` / `n+2`) images and
//! gzip the output when the path ends in `.gz`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use ndarray::{Array3, ShapeBuilder};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Volume};

const V1_HEADER: usize = 348;
const V2_HEADER: usize = 540;
const XYZT_MM: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NiftiVersion {
    #[default]
    V1,
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int8,
    Int16,
    Uint16,
    Int32,
    Uint32,
    Float32,
    Float64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        Some(match code {
            2 => Self::Uint8,
            256 => Self::Int8,
            4 => Self::Int16,
            512 => Self::Uint16,
            8 => Self::Int32,
            768 => Self::Uint32,
            16 => Self::Float32,
            64 => Self::Float64,
            _ => return None,
        })
    }

    fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int8 => 256,
            Self::Int16 => 4,
            Self::Uint16 => 512,
            Self::Int32 => 8,
            Self::Uint32 => 768,
            Self::Float32 => 16,
            Self::Float64 => 64,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::Uint8 | Self::Int8 => 1,
            Self::Int16 | Self::Uint16 => 2,
            Self::Int32 | Self::Uint32 | Self::Float32 => 4,
            Self::Float64 => 8,
        }
    }
}

/// The header fields this crate consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub version: NiftiVersion,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub datatype: DataType,
    pub vox_offset: usize,
    pub scl_slope: f64,
    pub scl_inter: f64,
    big_endian: bool,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| malformed(path, format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

trait Endian {
    fn i16(&self, b: &[u8]) -> i16;
    fn i32(&self, b: &[u8]) -> i32;
    fn i64(&self, b: &[u8]) -> i64;
    fn f32(&self, b: &[u8]) -> f32;
    fn f64(&self, b: &[u8]) -> f64;
}

macro_rules! endian_impl {
    ($name:ident, $bo:ty) => {
        struct $name;
        impl Endian for $name {
            fn i16(&self, b: &[u8]) -> i16 {
                <$bo>::read_i16(b)
            }
            fn i32(&self, b: &[u8]) -> i32 {
                <$bo>::read_i32(b)
            }
            fn i64(&self, b: &[u8]) -> i64 {
                <$bo>::read_i64(b)
            }
            fn f32(&self, b: &[u8]) -> f32 {
                <$bo>::read_f32(b)
            }
            fn f64(&self, b: &[u8]) -> f64 {
                <$bo>::read_f64(b)
            }
        }
    };
}
endian_impl!(Little, LittleEndian);
endian_impl!(Big, BigEndian);

fn parse_header(path: &Path, b: &[u8]) -> Result<NiftiHeader> {
    if b.len() < 4 {
        return Err(malformed(path, "file shorter than a header"));
    }
    let (version, big_endian) = match (LittleEndian::read_i32(b), BigEndian::read_i32(b)) {
        (348, _) => (NiftiVersion::V1, false),
        (_, 348) => (NiftiVersion::V1, true),
        (540, _) => (NiftiVersion::V2, false),
        (_, 540) => (NiftiVersion::V2, true),
        (n, _) => return Err(malformed(path, format!("unrecognised sizeof_hdr {n}"))),
    };
    let need = match version {
        NiftiVersion::V1 => V1_HEADER,
        NiftiVersion::V2 => V2_HEADER,
    };
    if b.len() < need {
        return Err(malformed(path, format!("header truncated at {} bytes", b.len())));
    }
    let e: &dyn Endian = if big_endian { &Big } else { &Little };

    let (dim, pixdim, datatype, vox_offset, slope, inter) = match version {
        NiftiVersion::V1 => {
            if &b[344..347] != b"n+1" && &b[344..347] != b"ni1" {
                return Err(malformed(path, "bad NIfTI-1 magic"));
            }
            let dim: Vec<i64> = (0..8).map(|i| i64::from(e.i16(&b[40 + 2 * i..]))).collect();
            let pixdim: Vec<f64> = (0..8).map(|i| f64::from(e.f32(&b[76 + 4 * i..]))).collect();
            (
                dim,
                pixdim,
                e.i16(&b[70..]),
                f64::from(e.f32(&b[108..])),
                f64::from(e.f32(&b[112..])),
                f64::from(e.f32(&b[116..])),
            )
        }
        NiftiVersion::V2 => {
            if &b[4..7] != b"n+2" && &b[4..7] != b"ni2" {
                return Err(malformed(path, "bad NIfTI-2 magic"));
            }
            let dim: Vec<i64> = (0..8).map(|i| e.i64(&b[16 + 8 * i..])).collect();
            let pixdim: Vec<f64> = (0..8).map(|i| e.f64(&b[104 + 8 * i..])).collect();
            (
                dim,
                pixdim,
                e.i16(&b[12..]),
                e.i64(&b[168..]) as f64,
                e.f64(&b[176..]),
                e.f64(&b[184..]),
            )
        }
    };

    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(malformed(path, format!("dim[0] = {ndim} out of range")));
    }
    let used = &dim[1..=ndim as usize];
    if used.iter().any(|&d| d < 1) {
        return Err(malformed(path, format!("non-positive dimension in {used:?}")));
    }
    let trailing_ok = used.iter().skip(3).all(|&d| d == 1);
    if ndim < 3 || !trailing_ok {
        return Err(Error::NotThreeDimensional {
            path: path.to_path_buf(),
            dims: used.to_vec(),
        });
    }
    let spacing = [pixdim[1], pixdim[2], pixdim[3]];
    if !spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        return Err(Error::InvalidSpacing(spacing));
    }
    let datatype = DataType::from_code(datatype).ok_or(Error::UnsupportedDatatype {
        path: path.to_path_buf(),
        code: datatype,
    })?;
    if !(vox_offset >= need as f64) {
        return Err(malformed(path, format!("vox_offset {vox_offset} inside header")));
    }
    // A zero slope means "no scaling".
    let (scl_slope, scl_inter) = if slope == 0.0 || !slope.is_finite() {
        (1.0, 0.0)
    } else {
        (slope, if inter.is_finite() { inter } else { 0.0 })
    };

    Ok(NiftiHeader {
        version,
        dims: [used[0] as usize, used[1] as usize, used[2] as usize],
        spacing,
        datatype,
        vox_offset: vox_offset as usize,
        scl_slope,
        scl_inter,
        big_endian,
    })
}

fn decode_voxels(path: &Path, h: &NiftiHeader, bytes: &[u8]) -> Result<Vec<f64>> {
    let n = h.dims.iter().product::<usize>();
    let size = h.datatype.size();
    let end = h.vox_offset + n * size;
    if bytes.len() < end {
        return Err(malformed(
            path,
            format!("payload truncated: need {end} bytes, file has {}", bytes.len()),
        ));
    }
    let payload = &bytes[h.vox_offset..end];
    let e: &dyn Endian = if h.big_endian { &Big } else { &Little };
    let raw = |c: &[u8]| -> f64 {
        match h.datatype {
            DataType::Uint8 => f64::from(c[0]),
            DataType::Int8 => f64::from(c[0] as i8),
            DataType::Int16 => f64::from(e.i16(c)),
            DataType::Uint16 => f64::from(e.i16(c) as u16),
            DataType::Int32 => f64::from(e.i32(c)),
            DataType::Uint32 => f64::from(e.i32(c) as u32),
            DataType::Float32 => f64::from(e.f32(c)),
            DataType::Float64 => e.f64(c),
        }
    };
    Ok(payload
        .chunks_exact(size)
        .map(|c| raw(c) * h.scl_slope + h.scl_inter)
        .collect())
}

/// Reads the header only.
pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    parse_header(path, &bytes)
}

/// Reads a single-channel 3D image; spacing comes from `pixdim[1..=3]`.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let h = parse_header(path, &bytes)?;
    let voxels = decode_voxels(path, &h, &bytes)?;
    let [nx, ny, nz] = h.dims;
    // NIfTI stores x fastest, i.e. Fortran order over [x, y, z].
    let data = Array3::from_shape_vec((nx, ny, nz).f(), voxels)
        .map_err(|e| malformed(path, e.to_string()))?
        .as_standard_layout()
        .into_owned();
    Volume::new(data, h.spacing)
}

/// Reads a volume and requires every voxel to be exactly 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let v = read_volume(path)?;
    BinaryMask::from_volume(&v).map_err(|e| match e {
        Error::NonBinary { index, value } => Error::Integrity(format!(
            "{}: mask voxel {index:?} has non-binary value {value}",
            path.display()
        )),
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub version: NiftiVersion,
    pub datatype: DataType,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self {
            version: NiftiVersion::V1,
            datatype: DataType::Float32,
        }
    }
}

fn encode_header(shape: [usize; 3], spacing: [f64; 3], opts: WriteOptions) -> Vec<u8> {
    let dt = opts.datatype;
    match opts.version {
        NiftiVersion::V1 => {
            let mut b = vec![0u8; V1_HEADER + 4];
            LittleEndian::write_i32(&mut b[0..], V1_HEADER as i32);
            b[38] = b'r';
            let dims = [3, shape[0] as i16, shape[1] as i16, shape[2] as i16, 1, 1, 1, 1];
            for (i, d) in dims.iter().enumerate() {
                LittleEndian::write_i16(&mut b[40 + 2 * i..], *d);
            }
            LittleEndian::write_i16(&mut b[70..], dt.code());
            LittleEndian::write_i16(&mut b[72..], (dt.size() * 8) as i16);
            let pix = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
            for (i, p) in pix.iter().enumerate() {
                LittleEndian::write_f32(&mut b[76 + 4 * i..], *p as f32);
            }
            LittleEndian::write_f32(&mut b[108..], (V1_HEADER + 4) as f32);
            LittleEndian::write_f32(&mut b[112..], 1.0);
            b[123] = XYZT_MM;
            LittleEndian::write_i16(&mut b[254..], 1);
            for axis in 0..3 {
                LittleEndian::write_f32(&mut b[280 + 16 * axis + 4 * axis..], spacing[axis] as f32);
            }
            b[344..348].copy_from_slice(b"n+1\0");
            b
        }
        NiftiVersion::V2 => {
            let mut b = vec![0u8; V2_HEADER + 4];
            LittleEndian::write_i32(&mut b[0..], V2_HEADER as i32);
            b[4..12].copy_from_slice(b"n+2\0\r\n\x1a\n");
            LittleEndian::write_i16(&mut b[12..], dt.code());
            LittleEndian::write_i16(&mut b[14..], (dt.size() * 8) as i16);
            let dims = [3, shape[0] as i64, shape[1] as i64, shape[2] as i64, 1, 1, 1, 1];
            for (i, d) in dims.iter().enumerate() {
                LittleEndian::write_i64(&mut b[16 + 8 * i..], *d);
            }
            let pix = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
            for (i, p) in pix.iter().enumerate() {
                LittleEndian::write_f64(&mut b[104 + 8 * i..], *p);
            }
            LittleEndian::write_i64(&mut b[168..], (V2_HEADER + 4) as i64);
            LittleEndian::write_f64(&mut b[176..], 1.0);
            LittleEndian::write_i32(&mut b[348..], 1);
            for axis in 0..3 {
                LittleEndian::write_f64(&mut b[400 + 32 * axis + 8 * axis..], spacing[axis]);
            }
            LittleEndian::write_i32(&mut b[500..], i32::from(XYZT_MM));
            b
        }
    }
}

fn write_image(
    path: &Path,
    shape: [usize; 3],
    spacing: [f64; 3],
    values: impl Iterator<Item = f64>,
    opts: WriteOptions,
) -> Result<()> {
    if opts.version == NiftiVersion::V1 && shape.iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::InvalidArgument(format!(
            "shape {shape:?} exceeds NIfTI-1 limits"
        )));
    }
    let mut buf = encode_header(shape, spacing, opts);
    let dt = opts.datatype;
    let mut tmp = [0u8; 8];
    for v in values {
        let n = dt.size();
        match dt {
            DataType::Uint8 => tmp[0] = v as u8,
            DataType::Int8 => tmp[0] = v as i8 as u8,
            DataType::Int16 => LittleEndian::write_i16(&mut tmp, v as i16),
            DataType::Uint16 => LittleEndian::write_u16(&mut tmp, v as u16),
            DataType::Int32 => LittleEndian::write_i32(&mut tmp, v as i32),
            DataType::Uint32 => LittleEndian::write_u32(&mut tmp, v as u32),
            DataType::Float32 => LittleEndian::write_f32(&mut tmp, v as f32),
            DataType::Float64 => LittleEndian::write_f64(&mut tmp, v),
        }
        buf.extend_from_slice(&tmp[..n]);
    }
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let bytes = if gz {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&buf).map_err(|e| Error::io(path, e))?;
        enc.finish().map_err(|e| Error::io(path, e))?
    } else {
        buf
    };
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a float32 NIfTI-1 image.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_with(v, path, WriteOptions::default())
}

pub fn write_volume_with(v: &Volume, path: impl AsRef<Path>, opts: WriteOptions) -> Result<()> {
    write_image(
        path.as_ref(),
        v.shape(),
        v.spacing(),
        v.data().t().iter().copied(),
        opts,
    )
}

/// Writes a uint8 NIfTI-1 mask.
pub fn write_mask(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_image(
        path.as_ref(),
        m.shape(),
        m.spacing(),
        m.data().t().iter().map(|&x| f64::from(x)),
        WriteOptions {
            version: NiftiVersion::V1,
            datatype: DataType::Uint8,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(shape: [usize; 3], spacing: [f64; 3]) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        Volume::from_fn(shape, spacing, |_| rng.random_range(-5.0..5.0)).unwrap()
    }

    fn assert_close(a: &Volume, b: &Volume) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data().iter()) {
            assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn round_trip_v1_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample([5, 4, 3], [1.5, 0.25, 2.0]);
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&v, &p).unwrap();
            let r = read_volume(&p).unwrap();
            assert_eq!(r.spacing(), v.spacing());
            assert_close(&r, &v);
        }
    }

    #[test]
    fn round_trip_v2_keeps_f64_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample([3, 6, 2], [1.38114, 2.43458, 1.51483]);
        let p = dir.path().join("b.nii");
        let opts = WriteOptions {
            version: NiftiVersion::V2,
            datatype: DataType::Float64,
        };
        write_volume_with(&v, &p, opts).unwrap();
        let h = read_header(&p).unwrap();
        assert_eq!(h.version, NiftiVersion::V2);
        let r = read_volume(&p).unwrap();
        assert_eq!(r, v);
    }

    #[test]
    fn axis_order_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_fn([2, 3, 4], [1.0; 3], |(x, y, z)| (100 * x + 10 * y + z) as f64)
            .unwrap();
        let p = dir.path().join("order.nii");
        write_volume(&v, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        // second stored voxel is x=1, y=0, z=0
        assert_eq!(LittleEndian::read_f32(&bytes[352 + 4..]), 100.0);
        assert_eq!(read_volume(&p).unwrap(), v);
    }

    #[test]
    fn big_endian_header_is_read() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = vec![0u8; 352];
        BigEndian::write_i32(&mut b[0..], 348);
        for (i, d) in [3i16, 2, 1, 1, 1, 1, 1, 1].iter().enumerate() {
            BigEndian::write_i16(&mut b[40 + 2 * i..], *d);
        }
        BigEndian::write_i16(&mut b[70..], 4);
        BigEndian::write_i16(&mut b[72..], 16);
        for (i, p) in [1.0f32, 2.0, 3.0, 4.0].iter().enumerate() {
            BigEndian::write_f32(&mut b[76 + 4 * i..], *p);
        }
        BigEndian::write_f32(&mut b[108..], 352.0);
        BigEndian::write_f32(&mut b[112..], 2.0);
        BigEndian::write_f32(&mut b[116..], 1.0);
        b[344..348].copy_from_slice(b"n+1\0");
        b.extend_from_slice(&[0, 5, 0xff, 0xfe]);
        let p = dir.path().join("be.nii");
        fs::write(&p, &b).unwrap();
        let v = read_volume(&p).unwrap();
        assert_eq!(v.spacing(), [2.0, 3.0, 4.0]);
        assert_eq!(v.data().as_slice().unwrap(), &[11.0, -3.0]);
    }

    #[test]
    fn error_classes_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_volume(dir.path().join("missing.nii")),
            Err(Error::MissingFile(_))
        ));

        let v = sample([4, 4, 4], [1.0; 3]);
        let p = dir.path().join("full.nii");
        write_volume(&v, &p).unwrap();
        let bytes = fs::read(&p).unwrap();

        let t = dir.path().join("trunc.nii");
        fs::write(&t, &bytes[..200]).unwrap();
        assert!(matches!(read_volume(&t), Err(Error::MalformedHeader { .. })));
        fs::write(&t, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(read_volume(&t), Err(Error::MalformedHeader { .. })));

        let mut two_channel = bytes.clone();
        LittleEndian::write_i16(&mut two_channel[40..], 4);
        LittleEndian::write_i16(&mut two_channel[48..], 2);
        let c = dir.path().join("chan.nii");
        fs::write(&c, &two_channel).unwrap();
        assert!(matches!(read_volume(&c), Err(Error::NotThreeDimensional { .. })));

        let mut flat = bytes.clone();
        LittleEndian::write_i16(&mut flat[40..], 2);
        fs::write(&c, &flat).unwrap();
        assert!(matches!(read_volume(&c), Err(Error::NotThreeDimensional { .. })));

        let mut zero_spacing = bytes.clone();
        LittleEndian::write_f32(&mut zero_spacing[80..], 0.0);
        fs::write(&c, &zero_spacing).unwrap();
        assert!(matches!(read_volume(&c), Err(Error::InvalidSpacing(_))));
    }

    #[test]
    fn masks_round_trip_and_reject_non_binary() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn([3, 3, 3], [1.0, 2.0, 1.0], |(x, y, _)| x == y).unwrap();
        let p = dir.path().join("m.nii.gz");
        write_mask(&m, &p).unwrap();
        assert_eq!(read_header(&p).unwrap().datatype, DataType::Uint8);
        assert_eq!(read_mask(&p).unwrap(), m);

        let v = Volume::filled([2, 2, 2], [1.0; 3], 0.5).unwrap();
        let q = dir.path().join("soft.nii");
        write_volume(&v, &q).unwrap();
        assert!(matches!(read_mask(&q), Err(Error::Integrity(_))));
    }
}
