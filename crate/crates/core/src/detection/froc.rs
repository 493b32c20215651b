//! Free-response ROC: lesion recall against false-positive components per
//! image, swept over probability thresholds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matching::{match_lesions, MatchCriterion};
use crate::components::{label_components, label_thresholded, Connectivity};
use crate::error::{Error, Result};
use crate::par;
use crate::volume_io::Volume;

/// FP-per-image operating points averaged into the summary recall.
pub const DEFAULT_FP_TARGETS: [f64; 7] = [0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// `{i / 50 : i = 1..=49}`, every multiple of 0.02 strictly inside (0, 1).
pub fn default_thresholds() -> Vec<f64> {
    (1..50).map(|i| i as f64 / 50.0).collect()
}

/// One patient: ground-truth mask and predicted probability map.
#[derive(Debug, Clone)]
pub struct Case {
    pub patient_id: String,
    pub target: Volume,
    pub prob: Volume,
}

impl Case {
    pub fn new(patient_id: impl Into<String>, target: Volume, prob: Volume) -> Self {
        Case {
            patient_id: patient_id.into(),
            target,
            prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocConfig {
    pub thresholds: Vec<f64>,
    pub connectivity: Connectivity,
    pub criterion: MatchCriterion,
}

impl Default for FrocConfig {
    fn default() -> Self {
        FrocConfig {
            thresholds: default_thresholds(),
            connectivity: Connectivity::default(),
            criterion: MatchCriterion::default(),
        }
    }
}

impl FrocConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::Empty("threshold list"));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::InvalidParameter(format!("threshold {t} outside (0, 1)")));
        }
        self.criterion.validate()
    }
}

/// Operating point of a single threshold, before the envelope is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrocPoint {
    pub threshold: f64,
    pub avg_fp: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub avg_fp: f64,
    pub recall: f64,
    /// Threshold of the raw point kept for this false-positive level.
    pub threshold: f64,
}

/// FROC curve: false-positive rate strictly increasing, recall non-decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    points: Vec<CurvePoint>,
}

impl FrocCurve {
    /// Sorts by FP rate, keeps the best recall per FP rate and replaces
    /// recall by its running maximum.
    pub fn from_raw(raw: &[FrocPoint]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Empty("FROC points"));
        }
        let mut sorted = raw.to_vec();
        sorted.sort_by(|a, b| {
            a.avg_fp
                .total_cmp(&b.avg_fp)
                .then(b.recall.total_cmp(&a.recall))
                .then(a.threshold.total_cmp(&b.threshold))
        });
        let mut points: Vec<CurvePoint> = Vec::new();
        let mut best = f64::NEG_INFINITY;
        for p in sorted {
            if points.last().is_some_and(|last| last.avg_fp == p.avg_fp) {
                continue;
            }
            best = best.max(p.recall);
            points.push(CurvePoint {
                avg_fp: p.avg_fp,
                recall: best,
                threshold: p.threshold,
            });
        }
        let curve = FrocCurve { points };
        curve.check()?;
        Ok(curve)
    }

    /// Builds a curve from already-enveloped `(avg_fp, recall)` pairs.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("FROC points"));
        }
        let curve = FrocCurve {
            points: points
                .iter()
                .map(|&(avg_fp, recall)| CurvePoint {
                    avg_fp,
                    recall,
                    threshold: f64::NAN,
                })
                .collect(),
        };
        curve.check()?;
        Ok(curve)
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn check(&self) -> Result<()> {
        for p in &self.points {
            if !(p.avg_fp >= 0.0 && p.avg_fp.is_finite()) || !(0.0..=1.0).contains(&p.recall) {
                return Err(Error::Invariant(format!("bad FROC point {p:?}")));
            }
        }
        for w in self.points.windows(2) {
            if w[1].avg_fp <= w[0].avg_fp || w[1].recall < w[0].recall {
                return Err(Error::Invariant(format!(
                    "FROC envelope broken between {:?} and {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    /// Recall at `fp` by linear interpolation, anchored at (0, 0) on the left
    /// and held constant past the last point.
    pub fn recall_at(&self, fp: f64) -> f64 {
        let first = self.points[0];
        let mut prev = if first.avg_fp > 0.0 {
            (0.0, 0.0)
        } else {
            (first.avg_fp, first.recall)
        };
        for p in &self.points {
            if fp == p.avg_fp {
                return p.recall;
            }
            if fp < p.avg_fp {
                let (f0, r0) = prev;
                return r0 + (p.recall - r0) * (fp - f0) / (p.avg_fp - f0);
            }
            prev = (p.avg_fp, p.recall);
        }
        prev.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageRecall {
    pub mean: f64,
    /// `(fp target, recall)` in target order.
    pub recall_at_fp: Vec<(f64, f64)>,
}

/// Mean of the curve's recall at each FP-per-image target.
pub fn average_recall(curve: &FrocCurve, fp_targets: &[f64]) -> Result<AverageRecall> {
    if curve.points.is_empty() {
        return Err(Error::Empty("FROC curve"));
    }
    if fp_targets.is_empty() {
        return Err(Error::Empty("FP targets"));
    }
    if let Some(t) = fp_targets.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter(format!("FP target {t} must be finite and >= 0")));
    }
    let recall_at_fp: Vec<(f64, f64)> = fp_targets.iter().map(|&t| (t, curve.recall_at(t))).collect();
    let mean = recall_at_fp.iter().map(|(_, r)| r).sum::<f64>() / fp_targets.len() as f64;
    Ok(AverageRecall { mean, recall_at_fp })
}

#[derive(Debug, Clone)]
struct Cell {
    false_positives: usize,
    found: Vec<bool>,
}

/// Per-patient, per-threshold detection counts. Building it does all the
/// labeling and matching; curves for any patient subset or lesion subset are
/// then plain integer aggregation.
#[derive(Debug, Clone)]
pub struct FrocTable {
    thresholds: Vec<f64>,
    patient_ids: Vec<String>,
    lesion_counts: Vec<usize>,
    lesion_sizes: Vec<Vec<usize>>,
    spacings: Vec<[f64; 3]>,
    /// `cells[case][threshold]`
    cells: Vec<Vec<Cell>>,
}

impl FrocTable {
    /// Cases are reordered by patient id.
    pub fn build(cases: &[Case], config: &FrocConfig) -> Result<Self> {
        if cases.is_empty() {
            return Err(Error::Empty("case list"));
        }
        config.validate()?;
        let mut order: Vec<usize> = (0..cases.len()).collect();
        order.sort_by(|&a, &b| cases[a].patient_id.cmp(&cases[b].patient_id));
        let cases: Vec<&Case> = order.iter().map(|&i| &cases[i]).collect();
        for c in &cases {
            c.target.ensure_same_shape(&c.prob)?;
        }

        let gts = par::map(&cases, |c| label_components(&c.target, config.connectivity));
        let gts = gts.into_iter().collect::<Result<Vec<_>>>()?;

        let n_thr = config.thresholds.len();
        let flat = par::map_range(cases.len() * n_thr, |task| {
            let (ci, ti) = (task / n_thr, task % n_thr);
            let pred = label_thresholded(&cases[ci].prob, config.thresholds[ti], config.connectivity);
            match_lesions(&gts[ci], &pred, config.criterion).map(|o| Cell {
                false_positives: o.false_positives,
                found: o.found_flags(),
            })
        });
        let mut flat = flat.into_iter();
        let mut cells = Vec::with_capacity(cases.len());
        for _ in 0..cases.len() {
            cells.push((&mut flat).take(n_thr).collect::<Result<Vec<_>>>()?);
        }

        Ok(FrocTable {
            thresholds: config.thresholds.clone(),
            patient_ids: cases.iter().map(|c| c.patient_id.clone()).collect(),
            lesion_counts: gts.iter().map(|g| g.k()).collect(),
            lesion_sizes: gts.iter().map(|g| g.sizes()[1..].to_vec()).collect(),
            spacings: gts.iter().map(|g| g.spacing()).collect(),
            cells,
        })
    }

    pub fn n_patients(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Lesion count per patient (patient-id order).
    pub fn lesion_counts(&self) -> &[usize] {
        &self.lesion_counts
    }

    pub fn total_lesions(&self) -> usize {
        self.lesion_counts.iter().sum()
    }

    /// Voxel counts of each patient's lesions, in label order.
    pub fn lesion_sizes(&self) -> &[Vec<usize>] {
        &self.lesion_sizes
    }

    pub fn spacings(&self) -> &[[f64; 3]] {
        &self.spacings
    }

    /// Raw operating points over the patients in `subset` (indices into
    /// patient-id order). `include[case][lesion]` restricts which lesions
    /// count toward recall; false positives always count. Returns `None`
    /// when no included lesion exists.
    pub fn raw_points(&self, subset: &[usize], include: Option<&[Vec<bool>]>) -> Option<Vec<FrocPoint>> {
        let counted = |ci: usize, li: usize| include.is_none_or(|inc| inc[ci][li]);
        let total: usize = subset
            .iter()
            .map(|&ci| (0..self.lesion_counts[ci]).filter(|&li| counted(ci, li)).count())
            .sum();
        if total == 0 || subset.is_empty() {
            return None;
        }
        let n = subset.len() as f64;
        Some(
            self.thresholds
                .iter()
                .enumerate()
                .map(|(ti, &threshold)| {
                    let (mut fp, mut found) = (0usize, 0usize);
                    for &ci in subset {
                        let cell = &self.cells[ci][ti];
                        fp += cell.false_positives;
                        found += cell
                            .found
                            .iter()
                            .enumerate()
                            .filter(|&(li, &f)| f && counted(ci, li))
                            .count();
                    }
                    FrocPoint {
                        threshold,
                        avg_fp: fp as f64 / n,
                        recall: found as f64 / total as f64,
                    }
                })
                .collect(),
        )
    }

    pub fn all_patients(&self) -> Vec<usize> {
        (0..self.n_patients()).collect()
    }

    /// Curve over every patient and every lesion.
    pub fn curve(&self) -> Result<FrocCurve> {
        let raw = self
            .raw_points(&self.all_patients(), None)
            .ok_or(Error::Empty("ground-truth lesions"))?;
        FrocCurve::from_raw(&raw)
    }
}

/// FROC curve of a set of cases.
pub fn froc_curve(
    cases: &[Case],
    thresholds: &[f64],
    connectivity: Connectivity,
    criterion: MatchCriterion,
) -> Result<FrocCurve> {
    let config = FrocConfig {
        thresholds: thresholds.to_vec(),
        connectivity,
        criterion,
    };
    FrocTable::build(cases, &config)?.curve()
}

/// CSV with one row per raw threshold (`on_envelope = 0`) followed by the
/// envelope rows (`on_envelope = 1`).
pub fn froc_csv(raw: &[FrocPoint], curve: &FrocCurve) -> String {
    let mut out = String::from("threshold,avg_fp_per_image,recall,on_envelope\n");
    for p in raw {
        writeln!(out, "{},{},{},0", p.threshold, p.avg_fp, p.recall).unwrap();
    }
    for p in curve.points() {
        writeln!(out, "{},{},{},1", p.threshold, p.avg_fp, p.recall).unwrap();
    }
    out
}
