//! Lesion-biased random patch extraction.
//!
//! With probability `lesion_prob` a foreground voxel is drawn uniformly and the
//! patch origin is drawn uniformly among origins whose patch covers it;
//! otherwise the origin is uniform over the volume. Axes shorter than the
//! patch are padded symmetrically first.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{Shape, Volume, VolumeData};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub lesion_prob: f64,
    /// Image padding value; masks are always padded with 0.
    pub pad_value: f64,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            size: [128; 3],
            lesion_prob: 0.5,
            pad_value: 0.0,
            seed: 0,
        }
    }
}

impl PatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "patch size {:?} must be positive",
                self.size
            )));
        }
        if !(0.0..=1.0).contains(&self.lesion_prob) {
            return Err(Error::InvalidParameter(format!(
                "lesion probability {} outside [0, 1]",
                self.lesion_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Volume,
    pub mask: Volume,
    /// Origin in original volume coordinates; negative along padded axes.
    pub origin: [i64; 3],
    /// Whether the lesion-biased branch produced this patch.
    pub lesion_biased: bool,
}

/// Stateful sampler: one RNG stream per instance.
#[derive(Debug, Clone)]
pub struct PatchSampler {
    spec: PatchSpec,
    rng: ChaCha8Rng,
}

impl PatchSampler {
    pub fn new(spec: PatchSpec) -> Result<Self> {
        spec.validate()?;
        Ok(PatchSampler {
            spec,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
        })
    }

    pub fn spec(&self) -> &PatchSpec {
        &self.spec
    }

    pub fn sample(&mut self, image: &Volume, mask: &Volume) -> Result<Patch> {
        sample_patch(image, mask, &self.spec, &mut self.rng)
    }
}

/// Leading pad per axis for a volume of `shape` and patches of `size`.
pub fn leading_padding(shape: Shape, size: [usize; 3]) -> [usize; 3] {
    let d = shape.dims();
    std::array::from_fn(|a| size[a].saturating_sub(d[a]) / 2)
}

/// Draws one patch using `rng`.
pub fn sample_patch<R: Rng>(image: &Volume, mask: &Volume, spec: &PatchSpec, rng: &mut R) -> Result<Patch> {
    spec.validate()?;
    image.ensure_same_shape(mask)?;
    let m = mask.as_u8()?;
    let shape = image.shape();
    let dims = shape.dims();
    let size = spec.size;
    let pad = leading_padding(shape, size);
    // extent of the padded volume per axis
    let padded: [usize; 3] = std::array::from_fn(|a| dims[a].max(size[a]));

    let want_lesion = rng.gen::<f64>() < spec.lesion_prob;
    let mut lesion_biased = false;
    let mut origin_padded = [0usize; 3];
    if want_lesion {
        let count = m.iter().filter(|&&v| v != 0).count();
        if count == 0 {
            log::warn!("lesion-biased draw on an all-background mask; sampling uniformly");
        } else {
            let pick = rng.gen_range(0..count);
            let voxel = m
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .nth(pick)
                .map(|(i, _)| shape.coords(i))
                .expect("pick < count");
            for a in 0..3 {
                let v = voxel[a] + pad[a];
                let lo = (v + 1).saturating_sub(size[a]);
                let hi = v.min(padded[a] - size[a]);
                origin_padded[a] = rng.gen_range(lo..=hi);
            }
            lesion_biased = true;
        }
    }
    if !lesion_biased {
        for a in 0..3 {
            origin_padded[a] = rng.gen_range(0..=padded[a] - size[a]);
        }
    }

    let origin: [i64; 3] = std::array::from_fn(|a| origin_padded[a] as i64 - pad[a] as i64);
    Ok(Patch {
        image: extract(image, origin, size, spec.pad_value)?,
        mask: extract(mask, origin, size, 0.0)?,
        origin,
        lesion_biased,
    })
}

/// Copies the `size` block at `origin` (may extend past the volume), filling
/// outside voxels with `fill` cast to the volume's dtype.
pub fn extract(volume: &Volume, origin: [i64; 3], size: [usize; 3], fill: f64) -> Result<Volume> {
    fn copy<T: Copy>(src: &[T], shape: Shape, origin: [i64; 3], out_shape: Shape, fill: T) -> Vec<T> {
        let d = shape.dims();
        (0..out_shape.len())
            .map(|i| {
                let c = out_shape.coords(i);
                let s: [i64; 3] = std::array::from_fn(|a| origin[a] + c[a] as i64);
                if (0..3).all(|a| s[a] >= 0 && (s[a] as usize) < d[a]) {
                    src[shape.index(s[0] as usize, s[1] as usize, s[2] as usize)]
                } else {
                    fill
                }
            })
            .collect()
    }
    let out_shape = Shape(size);
    let shape = volume.shape();
    let data = match volume.data() {
        VolumeData::U8(v) => VolumeData::U8(copy(v, shape, origin, out_shape, fill as u8)),
        VolumeData::I16(v) => VolumeData::I16(copy(v, shape, origin, out_shape, fill as i16)),
        VolumeData::F32(v) => VolumeData::F32(copy(v, shape, origin, out_shape, fill as f32)),
        VolumeData::F64(v) => VolumeData::F64(copy(v, shape, origin, out_shape, fill)),
    };
    Volume::new(out_shape, volume.spacing(), data)
}
