use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diameters below which lesions are considered small, per task.
pub const LUNG_NODULE_SMALL_MM: f64 = 10.0;
pub const BRAIN_METASTASIS_SMALL_MM: f64 = 5.0;
pub const LIVER_TUMOR_SMALL_MM: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeGroup {
    Small,
    Medium,
    Large,
}

impl SizeGroup {
    pub const ALL: [SizeGroup; 3] = [SizeGroup::Small, SizeGroup::Medium, SizeGroup::Large];

    pub fn name(self) -> &'static str {
        match self {
            SizeGroup::Small => "small",
            SizeGroup::Medium => "medium",
            SizeGroup::Large => "large",
        }
    }
}

impl fmt::Display for SizeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SizeMode {
    /// Three near-equal groups by diameter rank.
    #[default]
    Tertiles,
    /// Small below `threshold_mm` (strictly), large otherwise.
    Clinical { threshold_mm: f64 },
}

impl FromStr for SizeMode {
    type Err = Error;

    /// `tertiles`, `clinical:<mm>`, or a task preset `lung`, `metastases`,
    /// `liver`.
    fn from_str(s: &str) -> Result<Self> {
        let clinical = |t: f64| Ok(SizeMode::Clinical { threshold_mm: t });
        match s {
            "tertiles" => Ok(SizeMode::Tertiles),
            "lung" => clinical(LUNG_NODULE_SMALL_MM),
            "metastases" => clinical(BRAIN_METASTASIS_SMALL_MM),
            "liver" => clinical(LIVER_TUMOR_SMALL_MM),
            _ => match s.split_once(':') {
                Some(("clinical", t)) => clinical(
                    t.parse()
                        .map_err(|_| Error::InvalidParameter(format!("bad threshold {t:?}")))?,
                ),
                _ => Err(Error::InvalidParameter(format!("unknown size mode {s:?}"))),
            },
        }
    }
}

/// Assigns each diameter to a size group, preserving input order.
///
/// Tertiles: diameters are ranked (stable for ties) and ranks below
/// `ceil(n/3)` are small, below `ceil(2n/3)` medium, the rest large.
pub fn split_size_groups(diameters: &[f64], mode: SizeMode) -> Result<Vec<SizeGroup>> {
    if diameters.is_empty() {
        return Err(Error::Empty("diameter list"));
    }
    match mode {
        SizeMode::Tertiles => {
            let n = diameters.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| diameters[a].total_cmp(&diameters[b]));
            let (cut1, cut2) = (n.div_ceil(3), (2 * n).div_ceil(3));
            let mut out = vec![SizeGroup::Small; n];
            for (rank, &i) in order.iter().enumerate() {
                out[i] = if rank < cut1 {
                    SizeGroup::Small
                } else if rank < cut2 {
                    SizeGroup::Medium
                } else {
                    SizeGroup::Large
                };
            }
            Ok(out)
        }
        SizeMode::Clinical { threshold_mm } => {
            if !(threshold_mm > 0.0 && threshold_mm.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "clinical threshold must be positive, got {threshold_mm}"
                )));
            }
            Ok(diameters
                .iter()
                .map(|&d| if d < threshold_mm { SizeGroup::Small } else { SizeGroup::Large })
                .collect())
        }
    }
}
