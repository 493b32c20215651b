//! Dataset-level evaluation: bootstrapped average recall, object Dice and the
//! same metrics per lesion-size group.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_summary, BootstrapConfig, Summary};
use super::froc::{average_recall, Case, FrocConfig, FrocCurve, FrocPoint, FrocTable, DEFAULT_FP_TARGETS};
use super::matching::{match_lesions, object_dice};
use super::size_groups::{split_size_groups, SizeGroup, SizeMode};
use crate::components::{equivalent_diameter, label_components, label_thresholded};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceAggregation {
    /// One value per found lesion across all patients.
    #[default]
    Pooled,
    /// Mean per patient first, then across patients with a found lesion.
    PerPatient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub froc: FrocConfig,
    pub fp_targets: Vec<f64>,
    pub bootstrap: BootstrapConfig,
    pub size_mode: SizeMode,
    /// Probability cut used to binarize predictions for object Dice.
    pub dice_threshold: f64,
    pub dice_aggregation: DiceAggregation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            froc: FrocConfig::default(),
            fp_targets: DEFAULT_FP_TARGETS.to_vec(),
            bootstrap: BootstrapConfig::default(),
            size_mode: SizeMode::default(),
            dice_threshold: 0.5,
            dice_aggregation: DiceAggregation::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl From<Summary> for MeanStd {
    fn from(s: Summary) -> Self {
        MeanStd {
            mean: s.mean,
            std: s.std,
        }
    }
}

/// Object Dice summary; `mean`/`std` are absent when no lesion was found.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceSummary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub n_lesions: usize,
    pub avg_recall: Option<MeanStd>,
    pub recall_at_fp: Option<BTreeMap<String, f64>>,
    pub object_dice: DiceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeGroupReports {
    pub small: GroupReport,
    pub medium: GroupReport,
    pub large: GroupReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub avg_recall: MeanStd,
    pub recall_at_fp: BTreeMap<String, f64>,
    pub object_dice: DiceSummary,
    pub size_groups: SizeGroupReports,
    pub n_patients: usize,
    pub n_lesions: usize,
    pub config: EvalConfig,
}

/// Full evaluation output: the report plus the raw FROC points and curve over
/// all patients.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub raw_points: Vec<FrocPoint>,
    pub curve: FrocCurve,
}

fn fp_key(t: f64) -> String {
    format!("{t}")
}

fn recall_map(curve: &FrocCurve, targets: &[f64]) -> Result<BTreeMap<String, f64>> {
    Ok(average_recall(curve, targets)?
        .recall_at_fp
        .into_iter()
        .map(|(t, r)| (fp_key(t), r))
        .collect())
}

/// Per-lesion object Dice, `dice[case][lesion]`, `None` for missed lesions.
fn lesion_dice(cases: &[&Case], config: &EvalConfig) -> Result<Vec<Vec<Option<f64>>>> {
    let conn = config.froc.connectivity;
    par::map(cases, |c| {
        let gt = label_components(&c.target, conn)?;
        let pred = label_thresholded(&c.prob, config.dice_threshold, conn);
        let outcome = match_lesions(&gt, &pred, config.froc.criterion)?;
        let mut out = vec![None; gt.k()];
        for d in object_dice(&gt, &pred, &outcome)? {
            out[d.lesion as usize - 1] = Some(d.dice);
        }
        Ok(out)
    })
    .into_iter()
    .collect()
}

fn summarize_dice(
    dice: &[Vec<Option<f64>>],
    include: &[Vec<bool>],
    aggregation: DiceAggregation,
) -> DiceSummary {
    let per_case: Vec<Vec<f64>> = dice
        .iter()
        .zip(include)
        .map(|(d, inc)| d.iter().zip(inc).filter(|(_, &i)| i).filter_map(|(v, _)| *v).collect())
        .collect();
    let n = per_case.iter().map(Vec::len).sum();
    let values: Vec<f64> = match aggregation {
        DiceAggregation::Pooled => per_case.into_iter().flatten().collect(),
        DiceAggregation::PerPatient => per_case
            .into_iter()
            .filter(|v| !v.is_empty())
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect(),
    };
    let s = Summary::of(&values);
    DiceSummary {
        mean: s.map(|s| s.mean),
        std: s.map(|s| s.std),
        n,
    }
}

fn avg_recall_metric<'a>(
    table: &'a FrocTable,
    include: Option<&'a [Vec<bool>]>,
    targets: &'a [f64],
) -> impl Fn(&[usize]) -> Option<f64> + Sync + Send + 'a {
    move |subset: &[usize]| {
        let raw = table.raw_points(subset, include)?;
        let curve = FrocCurve::from_raw(&raw).ok()?;
        average_recall(&curve, targets).ok().map(|a| a.mean)
    }
}

/// Runs the full evaluation over `cases`.
pub fn evaluate(cases: &[Case], config: &EvalConfig) -> Result<Evaluation> {
    if !(config.dice_threshold > 0.0 && config.dice_threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "dice threshold {} outside (0, 1)",
            config.dice_threshold
        )));
    }
    config.bootstrap.validate()?;
    let table = FrocTable::build(cases, &config.froc)?;
    let n_lesions = table.total_lesions();
    if n_lesions == 0 {
        return Err(Error::Empty("ground-truth lesions"));
    }

    let raw_points = table
        .raw_points(&table.all_patients(), None)
        .ok_or(Error::Empty("ground-truth lesions"))?;
    let curve = FrocCurve::from_raw(&raw_points)?;
    let recall_at_fp = recall_map(&curve, &config.fp_targets)?;
    let avg_recall: MeanStd = bootstrap_summary(
        table.n_patients(),
        &config.bootstrap,
        avg_recall_metric(&table, None, &config.fp_targets),
    )?
    .into();

    let mut sorted: Vec<&Case> = cases.iter().collect();
    sorted.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
    let dice = lesion_dice(&sorted, config)?;
    let everything: Vec<Vec<bool>> = table.lesion_counts().iter().map(|&k| vec![true; k]).collect();
    let object_dice = summarize_dice(&dice, &everything, config.dice_aggregation);

    // pooled lesion diameters in (patient, label) order
    let mut diameters = Vec::with_capacity(n_lesions);
    for (sizes, spacing) in table.lesion_sizes().iter().zip(table.spacings()) {
        for &s in sizes {
            diameters.push(equivalent_diameter(s, *spacing)?);
        }
    }
    let groups = split_size_groups(&diameters, config.size_mode)?;

    let group_report = |group: SizeGroup| -> Result<GroupReport> {
        let mut flat = groups.iter().map(|&g| g == group);
        let include: Vec<Vec<bool>> = table
            .lesion_counts()
            .iter()
            .map(|&k| (&mut flat).take(k).collect())
            .collect();
        let n = include.iter().flatten().filter(|&&b| b).count();
        let object_dice = summarize_dice(&dice, &include, config.dice_aggregation);
        if n == 0 {
            return Ok(GroupReport {
                n_lesions: 0,
                avg_recall: None,
                recall_at_fp: None,
                object_dice,
            });
        }
        let raw = table
            .raw_points(&table.all_patients(), Some(&include))
            .ok_or(Error::Invariant("group without lesions".into()))?;
        let group_curve = FrocCurve::from_raw(&raw)?;
        let avg = bootstrap_summary(
            table.n_patients(),
            &config.bootstrap,
            avg_recall_metric(&table, Some(&include), &config.fp_targets),
        )
        .ok()
        .map(MeanStd::from);
        Ok(GroupReport {
            n_lesions: n,
            avg_recall: avg,
            recall_at_fp: Some(recall_map(&group_curve, &config.fp_targets)?),
            object_dice,
        })
    };
    let size_groups = SizeGroupReports {
        small: group_report(SizeGroup::Small)?,
        medium: group_report(SizeGroup::Medium)?,
        large: group_report(SizeGroup::Large)?,
    };
    let group_total =
        size_groups.small.n_lesions + size_groups.medium.n_lesions + size_groups.large.n_lesions;
    if group_total != n_lesions {
        return Err(Error::Invariant(format!(
            "size groups hold {group_total} lesions, expected {n_lesions}"
        )));
    }

    Ok(Evaluation {
        report: EvalReport {
            avg_recall,
            recall_at_fp,
            object_dice,
            size_groups,
            n_patients: table.n_patients(),
            n_lesions,
            config: config.clone(),
        },
        raw_points,
        curve,
    })
}
