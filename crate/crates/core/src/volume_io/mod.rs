//! Dense 3D volumes and their on-disk formats.
//!
//! A [`Volume`] is a C-ordered `(z, y, x)` grid (x fastest) with per-axis voxel
//! spacing in millimetres. It backs images, probability maps, binary masks,
//! labels and weight maps alike.

mod nifti;
mod preprocess;
mod vol;

pub use nifti::{load_nifti, parse_nifti};
pub use preprocess::{preprocess, PreprocessConfig};
pub use vol::{header_path as vol_header_path, load_vol, raw_path, save_vol, VolHeader};

use std::fmt;

use crate::error::{Error, Result};

/// Voxel element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    U8,
    I16,
    F32,
    F64,
}

impl DType {
    pub fn name(self) -> &'static str {
        match self {
            DType::U8 => "u8",
            DType::I16 => "i16",
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    pub fn size_of(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(DType::U8),
            "i16" => Ok(DType::I16),
            "f32" => Ok(DType::F32),
            "f64" => Ok(DType::F64),
            other => Err(Error::UnknownDtype(other.to_string())),
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Typed voxel storage.
#[derive(Debug, Clone)]
pub enum VolumeData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl VolumeData {
    pub fn dtype(&self) -> DType {
        match self {
            VolumeData::U8(_) => DType::U8,
            VolumeData::I16(_) => DType::I16,
            VolumeData::F32(_) => DType::F32,
            VolumeData::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VolumeData::U8(v) => v.len(),
            VolumeData::I16(v) => v.len(),
            VolumeData::F32(v) => v.len(),
            VolumeData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Value at linear index `i`, widened to f64.
    pub fn get_f64(&self, i: usize) -> f64 {
        match self {
            VolumeData::U8(v) => v[i] as f64,
            VolumeData::I16(v) => v[i] as f64,
            VolumeData::F32(v) => v[i] as f64,
            VolumeData::F64(v) => v[i],
        }
    }

    /// Little-endian byte image of the payload.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VolumeData::U8(v) => v.clone(),
            VolumeData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VolumeData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VolumeData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    /// Decodes a little-endian payload. `bytes.len()` must be a multiple of the
    /// element size.
    pub fn from_le_bytes(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::U8 => VolumeData::U8(bytes.to_vec()),
            DType::I16 => VolumeData::I16(
                bytes
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]))
                    .collect(),
            ),
            DType::F32 => VolumeData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F64 => VolumeData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
            ),
        }
    }

    fn bits_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (VolumeData::U8(a), VolumeData::U8(b)) => a == b,
            (VolumeData::I16(a), VolumeData::I16(b)) => a == b,
            (VolumeData::F32(a), VolumeData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (VolumeData::F64(a), VolumeData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Grid extent `(z, y, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 3]);

impl Shape {
    pub fn new(z: usize, y: usize, x: usize) -> Self {
        Shape([z, y, x])
    }

    pub fn cube(n: usize) -> Self {
        Shape([n, n, n])
    }

    pub fn len(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        self.0
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.0[1] + y) * self.0[2] + x
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let x = i % self.0[2];
        let r = i / self.0[2];
        [r / self.0[1], r % self.0[1], x]
    }
}

/// A 3D voxel grid. Equality is bitwise on the payload, so NaN payloads compare
/// equal to themselves.
#[derive(Debug, Clone)]
pub struct Volume {
    shape: Shape,
    spacing: [f64; 3],
    data: VolumeData,
}

impl PartialEq for Volume {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .spacing
                .iter()
                .zip(&other.spacing)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.data.bits_eq(&other.data)
    }
}

impl Volume {
    pub fn new(shape: Shape, spacing: [f64; 3], data: VolumeData) -> Result<Self> {
        if shape.0.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "shape {:?} has a zero extent",
                shape.0
            )));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidVolume(format!(
                "spacing {spacing:?} must be finite and positive"
            )));
        }
        if data.len() != shape.len() {
            return Err(Error::InvalidVolume(format!(
                "{} elements for shape {:?}",
                data.len(),
                shape.0
            )));
        }
        Ok(Volume {
            shape,
            spacing,
            data,
        })
    }

    /// Unit-spacing volume; panics on invalid shape/length. Handy for tests and
    /// fixtures.
    pub fn from_u8(shape: Shape, data: Vec<u8>) -> Self {
        Volume::new(shape, [1.0; 3], VolumeData::U8(data)).expect("valid u8 volume")
    }

    pub fn from_f64(shape: Shape, data: Vec<f64>) -> Self {
        Volume::new(shape, [1.0; 3], VolumeData::F64(data)).expect("valid f64 volume")
    }

    pub fn from_f32(shape: Shape, data: Vec<f32>) -> Self {
        Volume::new(shape, [1.0; 3], VolumeData::F32(data)).expect("valid f32 volume")
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidVolume(format!(
                "spacing {spacing:?} must be finite and positive"
            )));
        }
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn into_data(self) -> VolumeData {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            VolumeData::U8(v) => Ok(v),
            other => Err(Error::DtypeMismatch {
                expected: "u8",
                actual: other.dtype().name(),
            }),
        }
    }

    pub fn as_f64(&self) -> Result<&[f64]> {
        match &self.data {
            VolumeData::F64(v) => Ok(v),
            other => Err(Error::DtypeMismatch {
                expected: "f64",
                actual: other.dtype().name(),
            }),
        }
    }

    /// Copy of the payload widened to f64.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            VolumeData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            VolumeData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            VolumeData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            VolumeData::F64(v) => v.clone(),
        }
    }

    /// Same grid, payload narrowed to f32.
    pub fn to_f32(&self) -> Volume {
        let data = match &self.data {
            VolumeData::F32(v) => v.clone(),
            _ => self.to_f64_vec().into_iter().map(|x| x as f32).collect(),
        };
        Volume {
            shape: self.shape,
            spacing: self.spacing,
            data: VolumeData::F32(data),
        }
    }

    /// Same grid and spacing, new payload.
    pub fn with_data(&self, data: VolumeData) -> Result<Volume> {
        Volume::new(self.shape, self.spacing, data)
    }

    /// Validates that the payload is a `{0,1}` u8 mask and returns it.
    pub fn binary_mask(&self) -> Result<&[u8]> {
        let m = self.as_u8()?;
        if let Some(&bad) = m.iter().find(|&&v| v > 1) {
            return Err(Error::NonBinaryMask(bad as f64));
        }
        Ok(m)
    }

    pub fn ensure_same_shape(&self, other: &Volume) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape.0,
                right: other.shape.0,
            });
        }
        Ok(())
    }

    /// Sub-block starting at `origin` with extent `size`, which must lie inside
    /// the grid.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Volume> {
        for a in 0..3 {
            if size[a] == 0 || origin[a] + size[a] > self.shape.0[a] {
                return Err(Error::InvalidParameter(format!(
                    "crop origin {origin:?} size {size:?} exceeds shape {:?}",
                    self.shape.0
                )));
            }
        }
        let out_shape = Shape(size);
        let src = self.shape;
        let pick = |i: usize| {
            let [z, y, x] = out_shape.coords(i);
            src.index(z + origin[0], y + origin[1], x + origin[2])
        };
        let n = out_shape.len();
        let data = match &self.data {
            VolumeData::U8(v) => VolumeData::U8((0..n).map(|i| v[pick(i)]).collect()),
            VolumeData::I16(v) => VolumeData::I16((0..n).map(|i| v[pick(i)]).collect()),
            VolumeData::F32(v) => VolumeData::F32((0..n).map(|i| v[pick(i)]).collect()),
            VolumeData::F64(v) => VolumeData::F64((0..n).map(|i| v[pick(i)]).collect()),
        };
        Volume::new(out_shape, self.spacing, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_coords_agree() {
        let s = Shape::new(3, 4, 5);
        for i in 0..s.len() {
            let [z, y, x] = s.coords(i);
            assert_eq!(s.index(z, y, x), i);
        }
        assert_eq!(s.index(0, 0, 1), 1);
        assert_eq!(s.index(0, 1, 0), 5);
        assert_eq!(s.index(1, 0, 0), 20);
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(Volume::new(Shape::new(2, 2, 2), [1.0; 3], VolumeData::U8(vec![0; 7])).is_err());
        assert!(Volume::new(Shape::new(0, 2, 2), [1.0; 3], VolumeData::U8(vec![])).is_err());
        assert!(Volume::new(Shape::cube(1), [1.0, 0.0, 1.0], VolumeData::U8(vec![0])).is_err());
        assert!(Volume::new(Shape::cube(1), [1.0, f64::NAN, 1.0], VolumeData::U8(vec![0])).is_err());
    }

    #[test]
    fn nan_volumes_compare_bitwise() {
        let v = Volume::from_f32(Shape::cube(1), vec![f32::NAN]);
        assert_eq!(v, v.clone());
    }

    #[test]
    fn binary_mask_rejects_two() {
        let v = Volume::from_u8(Shape::new(1, 1, 2), vec![1, 2]);
        assert!(matches!(v.binary_mask(), Err(Error::NonBinaryMask(_))));
    }

    #[test]
    fn crop_picks_sub_block() {
        let s = Shape::new(2, 3, 4);
        let v = Volume::from_f64(s, (0..s.len()).map(|i| i as f64).collect());
        let c = v.crop([1, 1, 2], [1, 2, 2]).unwrap();
        assert_eq!(c.as_f64().unwrap(), &[18.0, 19.0, 22.0, 23.0]);
        assert!(v.crop([1, 0, 0], [2, 1, 1]).is_err());
    }
}
