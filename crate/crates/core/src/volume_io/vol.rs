//! The VOL container: a JSON header (`<name>.volhdr`) next to a raw
//! little-endian payload (`<name>.volraw`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DType, Shape, Volume, VolumeData};
use crate::error::{Error, Result};

pub const HEADER_EXT: &str = "volhdr";
pub const RAW_EXT: &str = "volraw";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolHeader {
    pub shape: [usize; 3],
    pub dtype: String,
    pub spacing_mm: [f64; 3],
}

/// Header path for `path`: kept as-is when it already ends in `.volhdr`,
/// otherwise `.volhdr` is appended.
pub fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == HEADER_EXT) {
        path.to_path_buf()
    } else {
        let mut s = path.as_os_str().to_owned();
        s.push(".");
        s.push(HEADER_EXT);
        PathBuf::from(s)
    }
}

/// Sibling payload path of a header (or stem) path.
pub fn raw_path(path: &Path) -> PathBuf {
    header_path(path).with_extension(RAW_EXT)
}

pub fn load_vol(path: impl AsRef<Path>) -> Result<Volume> {
    let hdr_path = header_path(path.as_ref());
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header: VolHeader =
        serde_json::from_str(&text).map_err(|e| Error::header(&hdr_path, e.to_string()))?;
    let dtype = DType::parse(&header.dtype)?;
    if header.shape.contains(&0) {
        return Err(Error::header(&hdr_path, "shape extents must be positive"));
    }
    if header.spacing_mm.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::header(&hdr_path, "spacing_mm must be finite and positive"));
    }
    let shape = Shape(header.shape);
    let expected = shape
        .0
        .iter()
        .try_fold(dtype.size_of(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::header(&hdr_path, "shape overflows"))?;

    let raw = raw_path(&hdr_path);
    let bytes = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Volume::new(shape, header.spacing_mm, VolumeData::from_le_bytes(dtype, &bytes))
}

pub fn save_vol(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let hdr_path = header_path(path.as_ref());
    let header = VolHeader {
        shape: volume.shape().0,
        dtype: volume.dtype().name().to_string(),
        spacing_mm: volume.spacing(),
    };
    let text = serde_json::to_string(&header).expect("header serializes");
    fs::write(&hdr_path, text).map_err(|e| Error::io(&hdr_path, e))?;
    let raw = raw_path(&hdr_path);
    fs::write(&raw, volume.data().to_le_bytes()).map_err(|e| Error::io(&raw, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_volume_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.volhdr");
        fs::write(&p, r#"{"shape":[2,2,2],"dtype":"f32","spacing_mm":[1,1,1]}"#).unwrap();
        fs::write(dir.path().join("z.volraw"), [0u8; 32]).unwrap();
        let v = load_vol(&p).unwrap();
        assert_eq!(v.shape(), Shape::cube(2));
        assert_eq!(v.to_f64_vec(), vec![0.0; 8]);
    }

    #[test]
    fn short_payload_is_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.volhdr");
        fs::write(&p, r#"{"shape":[2,2,2],"dtype":"f32","spacing_mm":[1,1,1]}"#).unwrap();
        fs::write(dir.path().join("z.volraw"), [0u8; 28]).unwrap();
        let err = load_vol(&p).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
    }

    #[test]
    fn unknown_dtype_and_garbled_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.volhdr");
        fs::write(&p, r#"{"shape":[1,1,1],"dtype":"u16","spacing_mm":[1,1,1]}"#).unwrap();
        fs::write(dir.path().join("a.volraw"), [0u8; 2]).unwrap();
        assert!(matches!(load_vol(&p), Err(Error::UnknownDtype(_))));

        fs::write(&p, "{not json").unwrap();
        assert!(matches!(load_vol(&p), Err(Error::Header { .. })));

        assert!(matches!(load_vol(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn single_u8_voxel_is_one_byte() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume::from_u8(Shape::cube(1), vec![7]);
        save_vol(&v, dir.path().join("one")).unwrap();
        assert_eq!(fs::read(dir.path().join("one.volraw")).unwrap(), vec![0x07]);
        assert_eq!(load_vol(dir.path().join("one.volhdr")).unwrap(), v);
    }

    #[test]
    fn nan_payload_survives_byte_for_byte() {
        let dir = tempfile::tempdir().unwrap();
        let quiet = f32::from_bits(0x7fc0_0001);
        let signalling = f32::from_bits(0x7f80_0001);
        let v = Volume::from_f32(Shape::new(1, 1, 3), vec![quiet, signalling, -0.0]);
        save_vol(&v, dir.path().join("n")).unwrap();
        let first = fs::read(dir.path().join("n.volraw")).unwrap();
        let back = load_vol(dir.path().join("n")).unwrap();
        save_vol(&back, dir.path().join("m")).unwrap();
        assert_eq!(first, fs::read(dir.path().join("m.volraw")).unwrap());
        assert_eq!(back, v);
    }

    #[test]
    fn paths() {
        assert_eq!(header_path(Path::new("a/b")), PathBuf::from("a/b.volhdr"));
        assert_eq!(header_path(Path::new("a/b.volhdr")), PathBuf::from("a/b.volhdr"));
        assert_eq!(raw_path(Path::new("a/b.volhdr")), PathBuf::from("a/b.volraw"));
        assert_eq!(raw_path(Path::new("a/b_img_0")), PathBuf::from("a/b_img_0.volraw"));
    }
}
