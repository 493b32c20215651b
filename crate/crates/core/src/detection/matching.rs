use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::components::ComponentSet;
use crate::error::{Error, Result};

/// When a predicted component counts as hitting a ground-truth lesion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCriterion {
    /// At least one shared voxel.
    #[default]
    Overlap,
    /// Intersection-over-union of the two components at least the given value.
    Iou(f64),
}

impl MatchCriterion {
    fn accepts(self, intersection: usize, gt_size: usize, pred_size: usize) -> bool {
        match self {
            MatchCriterion::Overlap => intersection > 0,
            MatchCriterion::Iou(tau) => {
                let union = gt_size + pred_size - intersection;
                intersection > 0 && intersection as f64 / union as f64 >= tau
            }
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            MatchCriterion::Iou(tau) if !(tau > 0.0 && tau <= 1.0) => Err(Error::InvalidParameter(
                format!("IoU threshold must lie in (0, 1], got {tau}"),
            )),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MatchCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatchCriterion::Overlap => f.write_str("overlap"),
            MatchCriterion::Iou(t) => write!(f, "iou:{t}"),
        }
    }
}

impl FromStr for MatchCriterion {
    type Err = Error;

    /// `overlap` or `iou:<tau>`.
    fn from_str(s: &str) -> Result<Self> {
        let c = match s.split_once(':') {
            None if s == "overlap" => MatchCriterion::Overlap,
            Some(("iou", t)) => MatchCriterion::Iou(t.parse().map_err(|_| {
                Error::InvalidParameter(format!("bad IoU threshold {t:?}"))
            })?),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown criterion {s:?} (expected overlap or iou:<tau>)"
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LesionMatch {
    pub found: bool,
    /// Labels of the predicted components that hit this lesion.
    pub matched: Vec<u32>,
}

/// Lesion-level matching of one prediction against its ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DetectionOutcome {
    /// Entry `k - 1` describes ground-truth lesion `k`.
    pub lesions: Vec<LesionMatch>,
    /// Entry `k - 1` is true when predicted component `k` hits no lesion.
    pub predicted_fp: Vec<bool>,
    pub true_positives: usize,
    pub false_negatives: usize,
    pub false_positives: usize,
}

impl DetectionOutcome {
    pub fn found_flags(&self) -> Vec<bool> {
        self.lesions.iter().map(|l| l.found).collect()
    }
}

/// Voxel counts shared by each (gt label, pred label) pair, both non-zero.
fn overlap_counts(gt: &ComponentSet, pred: &ComponentSet) -> BTreeMap<(u32, u32), usize> {
    let mut counts = BTreeMap::new();
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g != 0 && p != 0 {
            *counts.entry((g, p)).or_insert(0) += 1;
        }
    }
    counts
}

/// Matches predicted components to ground-truth lesions.
///
/// A lesion is found when at least one predicted component satisfies the
/// criterion with it; several components may jointly find one lesion and one
/// component may find several lesions. A predicted component is a false
/// positive when it satisfies the criterion with no lesion.
pub fn match_lesions(
    gt: &ComponentSet,
    pred: &ComponentSet,
    criterion: MatchCriterion,
) -> Result<DetectionOutcome> {
    if gt.shape() != pred.shape() {
        return Err(Error::ShapeMismatch {
            left: gt.shape().0,
            right: pred.shape().0,
        });
    }
    criterion.validate()?;
    let mut lesions = vec![
        LesionMatch {
            found: false,
            matched: Vec::new()
        };
        gt.k()
    ];
    let mut hit = vec![false; pred.k()];
    for ((g, p), inter) in overlap_counts(gt, pred) {
        if criterion.accepts(inter, gt.sizes()[g as usize], pred.sizes()[p as usize]) {
            let l = &mut lesions[g as usize - 1];
            l.found = true;
            l.matched.push(p);
            hit[p as usize - 1] = true;
        }
    }
    let true_positives = lesions.iter().filter(|l| l.found).count();
    let predicted_fp: Vec<bool> = hit.iter().map(|h| !h).collect();
    let false_positives = predicted_fp.iter().filter(|&&f| f).count();
    Ok(DetectionOutcome {
        false_negatives: lesions.len() - true_positives,
        lesions,
        predicted_fp,
        true_positives,
        false_positives,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectDice {
    /// Ground-truth lesion label.
    pub lesion: u32,
    pub dice: f64,
}

/// Dice of every found lesion against the union of its matched predicted
/// components. Missed lesions are left out.
pub fn object_dice(
    gt: &ComponentSet,
    pred: &ComponentSet,
    outcome: &DetectionOutcome,
) -> Result<Vec<ObjectDice>> {
    if gt.shape() != pred.shape() {
        return Err(Error::ShapeMismatch {
            left: gt.shape().0,
            right: pred.shape().0,
        });
    }
    if outcome.lesions.len() != gt.k() || outcome.predicted_fp.len() != pred.k() {
        return Err(Error::InvalidParameter(format!(
            "outcome covers {} lesions / {} predictions, sets have {} / {}",
            outcome.lesions.len(),
            outcome.predicted_fp.len(),
            gt.k(),
            pred.k()
        )));
    }
    if outcome
        .lesions
        .iter()
        .flat_map(|l| &l.matched)
        .any(|&p| p == 0 || p as usize > pred.k())
    {
        return Err(Error::InvalidParameter("outcome references unknown predicted components".into()));
    }

    let mut intersection = vec![0usize; gt.k() + 1];
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g != 0 && p != 0 && outcome.lesions[g as usize - 1].matched.contains(&p) {
            intersection[g as usize] += 1;
        }
    }
    Ok(outcome
        .lesions
        .iter()
        .enumerate()
        .filter(|(_, l)| l.found)
        .map(|(k, l)| {
            let g = k + 1;
            let pred_size: usize = l.matched.iter().map(|&p| pred.sizes()[p as usize]).sum();
            ObjectDice {
                lesion: g as u32,
                dice: 2.0 * intersection[g] as f64 / (gt.sizes()[g] + pred_size) as f64,
            }
        })
        .collect())
}
