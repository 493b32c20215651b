use serde::{Deserialize, Serialize};

use super::{Volume, VolumeData};
use crate::error::{Error, Result};

/// Intensity clipping, organ masking and min-max rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub clip_lo: f64,
    pub clip_hi: f64,
    /// Value written where the organ mask is 0. Must lie inside the clip range.
    pub outside_fill: Option<f64>,
    /// Per-image min-max scaling to `[0, 1]` after clipping and filling.
    pub rescale: bool,
}

impl PreprocessConfig {
    /// Lung CT window, background set to air.
    pub fn lung_ct() -> Self {
        PreprocessConfig {
            clip_lo: -1000.0,
            clip_hi: 300.0,
            outside_fill: Some(-1000.0),
            rescale: true,
        }
    }

    /// Liver CT window.
    pub fn liver_ct() -> Self {
        PreprocessConfig {
            clip_lo: -300.0,
            clip_hi: 300.0,
            outside_fill: Some(-300.0),
            rescale: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_lo.is_nan() || self.clip_hi.is_nan() || self.clip_lo >= self.clip_hi {
            return Err(Error::InvalidParameter(format!(
                "clip range [{}, {}] is empty",
                self.clip_lo, self.clip_hi
            )));
        }
        if let Some(fill) = self.outside_fill {
            if !(self.clip_lo..=self.clip_hi).contains(&fill) {
                return Err(Error::InvalidParameter(format!(
                    "outside fill {fill} lies outside [{}, {}]",
                    self.clip_lo, self.clip_hi
                )));
            }
        }
        Ok(())
    }
}

/// Clips to `[clip_lo, clip_hi]`, fills voxels where `organ_mask == 0` with
/// `outside_fill`, then optionally min-max rescales. A constant image rescales
/// to all zeros.
pub fn preprocess(
    volume: &Volume,
    config: &PreprocessConfig,
    organ_mask: Option<&Volume>,
) -> Result<Volume> {
    config.validate()?;
    let mask = match organ_mask {
        Some(m) => {
            volume.ensure_same_shape(m)?;
            Some(m.as_u8()?)
        }
        None => None,
    };

    let mut values: Vec<f64> = volume
        .to_f64_vec()
        .into_iter()
        .map(|v| v.clamp(config.clip_lo, config.clip_hi))
        .collect();

    if let (Some(mask), Some(fill)) = (mask, config.outside_fill) {
        values
            .iter_mut()
            .zip(mask)
            .filter(|(_, &m)| m == 0)
            .for_each(|(v, _)| *v = fill);
    }

    if config.rescale {
        let (lo, hi) = values
            .iter()
            .filter(|v| !v.is_nan())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if range > 0.0 && range.is_finite() {
            values.iter_mut().for_each(|v| *v = ((*v - lo) / range).clamp(0.0, 1.0));
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    volume.with_data(VolumeData::F32(values.into_iter().map(|v| v as f32).collect()))
}
