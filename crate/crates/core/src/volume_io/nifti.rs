//! Read-only ingestion of uncompressed single-file NIfTI-1 (`.nii`) volumes.

use std::fs;
use std::path::Path;

use super::{Shape, Volume, VolumeData};
use crate::error::{Error, Result};

const HEADER_LEN: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";

const DT_UINT8: i16 = 2;
const DT_INT16: i16 = 4;
const DT_FLOAT32: i16 = 16;
const DT_FLOAT64: i16 = 64;

pub fn load_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_nifti(&bytes)
}

#[derive(Clone, Copy)]
struct Reader<'a> {
    bytes: &'a [u8],
    big_endian: bool,
}

impl Reader<'_> {
    fn i16_at(&self, off: usize) -> i16 {
        let b = [self.bytes[off], self.bytes[off + 1]];
        if self.big_endian {
            i16::from_be_bytes(b)
        } else {
            i16::from_le_bytes(b)
        }
    }

    fn i32_at(&self, off: usize) -> i32 {
        let b: [u8; 4] = self.bytes[off..off + 4].try_into().unwrap();
        if self.big_endian {
            i32::from_be_bytes(b)
        } else {
            i32::from_le_bytes(b)
        }
    }

    fn f32_at(&self, off: usize) -> f32 {
        f32::from_bits(self.i32_at(off) as u32)
    }

    fn f64_at(&self, off: usize) -> f64 {
        let b: [u8; 8] = self.bytes[off..off + 8].try_into().unwrap();
        if self.big_endian {
            f64::from_be_bytes(b)
        } else {
            f64::from_le_bytes(b)
        }
    }
}

/// Decodes an in-memory `.nii` image. Either byte order is accepted; it is
/// detected from `sizeof_hdr`.
pub fn parse_nifti(bytes: &[u8]) -> Result<Volume> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(Error::CompressedNifti);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Nifti(format!(
            "file is {} bytes, shorter than the 348-byte header",
            bytes.len()
        )));
    }
    let le = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let be = i32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let big_endian = match (le, be) {
        (348, _) => false,
        (_, 348) => true,
        _ => {
            return Err(Error::Nifti(format!(
                "header length {le} != 348"
            )))
        }
    };
    let r = Reader { bytes, big_endian };

    if &bytes[344..348] != MAGIC {
        return Err(Error::Nifti(format!(
            "magic {:?} is not \"n+1\\0\"",
            &bytes[344..348]
        )));
    }

    let dim: Vec<i16> = (0..8).map(|k| r.i16_at(40 + 2 * k)).collect();
    if dim[0] != 3 {
        return Err(Error::Nifti(format!("dim[0] = {} but only 3D is supported", dim[0])));
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(Error::Nifti(format!("non-positive extent in dim {:?}", &dim[1..4])));
    }
    let (nx, ny, nz) = (dim[1] as usize, dim[2] as usize, dim[3] as usize);

    let datatype = r.i16_at(70);
    let elem = match datatype {
        DT_UINT8 => 1,
        DT_INT16 => 2,
        DT_FLOAT32 => 4,
        DT_FLOAT64 => 8,
        other => return Err(Error::UnsupportedDatatype(other)),
    };

    let pixdim: Vec<f64> = (0..8).map(|k| r.f32_at(76 + 4 * k) as f64).collect();
    let spacing = [pixdim[3].abs(), pixdim[2].abs(), pixdim[1].abs()];
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::Nifti(format!("invalid pixdim {:?}", &pixdim[1..4])));
    }

    let vox_offset = r.f32_at(108);
    if !vox_offset.is_finite() || vox_offset < HEADER_LEN as f32 {
        return Err(Error::Nifti(format!("vox_offset {vox_offset} inside the header")));
    }
    let start = vox_offset as usize;
    let n = nx * ny * nz;
    let end = start + n * elem;
    if bytes.len() < end {
        return Err(Error::SizeMismatch {
            expected: end,
            actual: bytes.len(),
        });
    }
    let payload = &bytes[start..end];

    // NIfTI stores x fastest, then y, then z, which is our (z, y, x) C order.
    let data = match datatype {
        DT_UINT8 => VolumeData::U8(payload.to_vec()),
        DT_INT16 => VolumeData::I16((0..n).map(|i| r.i16_at(start + 2 * i)).collect()),
        DT_FLOAT32 => VolumeData::F32((0..n).map(|i| r.f32_at(start + 4 * i)).collect()),
        DT_FLOAT64 => VolumeData::F64((0..n).map(|i| r.f64_at(start + 8 * i)).collect()),
        _ => unreachable!(),
    };

    let slope = r.f32_at(112);
    let inter = r.f32_at(116);
    let data = apply_scaling(data, slope, inter);

    Volume::new(Shape::new(nz, ny, nx), spacing, data)
}

/// Applies `scl_slope`/`scl_inter` when the slope is a non-zero finite number
/// and the pair is not the identity. Integer inputs become f32, f64 stays f64.
fn apply_scaling(data: VolumeData, slope: f32, inter: f32) -> VolumeData {
    if !slope.is_finite() || slope == 0.0 || (slope == 1.0 && inter == 0.0) {
        return data;
    }
    let inter = if inter.is_finite() { inter } else { 0.0 };
    match data {
        VolumeData::F64(v) => {
            VolumeData::F64(v.into_iter().map(|x| x * slope as f64 + inter as f64).collect())
        }
        other => {
            let n = other.len();
            VolumeData::F32(
                (0..n)
                    .map(|i| (other.get_f64(i) * slope as f64 + inter as f64) as f32)
                    .collect(),
            )
        }
    }
}
