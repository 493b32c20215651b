//! Lesion-level detection and delineation metrics.

mod bootstrap;
mod froc;
mod matching;
mod report;
mod size_groups;

pub use bootstrap::{bootstrap_sample, bootstrap_summary, BootstrapConfig, Summary};
pub use froc::{
    average_recall, default_thresholds, froc_csv, froc_curve, AverageRecall, Case, CurvePoint,
    FrocConfig, FrocCurve, FrocPoint, FrocTable, DEFAULT_FP_TARGETS,
};
pub use matching::{match_lesions, object_dice, DetectionOutcome, LesionMatch, MatchCriterion, ObjectDice};
pub use report::{
    evaluate, DiceAggregation, DiceSummary, EvalConfig, EvalReport, Evaluation, GroupReport,
    MeanStd, SizeGroupReports,
};
pub use size_groups::{
    split_size_groups, SizeGroup, SizeMode, BRAIN_METASTASIS_SMALL_MM, LIVER_TUMOR_SMALL_MM,
    LUNG_NODULE_SMALL_MM,
};
