//! `iwseg` command-line front end.
//!
//! Every command prints machine-readable output on stdout (JSON, or CSV for
//! `sizes`) and one-line diagnostics on stderr. Exit codes: 0 success,
//! 2 usage or validation failure, 3 internal invariant violation.

use std::collections::{BTreeMap, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::components::{label_components, Connectivity};
use crate::detection::{
    default_thresholds, evaluate, froc_csv, split_size_groups, BootstrapConfig, Case,
    DiceAggregation, EvalConfig, FrocConfig, MatchCriterion, SizeMode, DEFAULT_FP_TARGETS,
};
use crate::error::{Error, Result};
use crate::losses::{
    component_contributions, evaluate_loss, LossKind, LossSpec, Reduction, WceWeightSource,
    DEFAULT_DICE_EPS, DEFAULT_PROB_CLAMP_EPS,
};
use crate::sampler::{PatchSampler, PatchSpec};
use crate::volume_io::{load_nifti, load_vol, preprocess, save_vol, PreprocessConfig, Volume, VolumeData};
use crate::weighting::{check_weight_map, inverse_weight_map, patch_weights, weights_from_components};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Environment variable capping the worker count (0 = automatic).
pub const THREADS_ENV: &str = "IWSEG_THREADS";

#[derive(Debug, Parser)]
#[command(name = "iwseg", version, about = "Inverse lesion weighting, segmentation losses and FROC evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inverse-weight map of a binary mask.
    Weights(WeightsArgs),
    /// Loss value and gradient of a probability map against a mask.
    Loss(LossArgs),
    /// FROC / average recall / object Dice report over a manifest of cases.
    Eval(EvalArgs),
    /// NIfTI to VOL conversion with optional clipping, masking and scaling.
    Convert(ConvertArgs),
    /// Per-lesion equivalent diameters and size groups as CSV.
    Sizes(SizesArgs),
    /// Lesion-biased random patches.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 26)]
    pub connectivity: u8,
    /// Label the whole mask, then crop to the patch (only with --patch-*).
    #[arg(long)]
    pub whole_image: bool,
    #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], requires = "patch_size")]
    pub patch_origin: Option<Vec<usize>>,
    #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], requires = "patch_origin")]
    pub patch_size: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub loss: String,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value = "mean")]
    pub reduction: String,
    #[arg(long)]
    pub grad_out: Option<PathBuf>,
    #[arg(long, default_value_t = 26)]
    pub connectivity: u8,
    #[arg(long, default_value = "pred")]
    pub wce_source: String,
    #[arg(long, default_value_t = DEFAULT_PROB_CLAMP_EPS)]
    pub prob_eps: f64,
    #[arg(long, default_value_t = DEFAULT_DICE_EPS)]
    pub dice_eps: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub froc_csv: Option<PathBuf>,
    /// Comma-separated thresholds in (0, 1); defaults to 0.02, 0.04, ..., 0.98.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// `overlap` or `iou:<tau>`.
    #[arg(long, default_value = "overlap")]
    pub criterion: String,
    #[arg(long, default_value_t = 0)]
    pub bootstrap_seed: u64,
    #[arg(long, default_value_t = 100)]
    pub bootstrap_iters: usize,
    #[arg(long, default_value_t = 0.8)]
    pub bootstrap_frac: f64,
    #[arg(long)]
    pub with_replacement: bool,
    /// `tertiles`, `clinical` (needs --threshold-mm), `lung`, `metastases` or `liver`.
    #[arg(long, default_value = "tertiles")]
    pub size_mode: String,
    #[arg(long)]
    pub threshold_mm: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub dice_threshold: f64,
    #[arg(long)]
    pub per_patient_dice: bool,
    #[arg(long, default_value_t = 26)]
    pub connectivity: u8,
    #[arg(long, value_delimiter = ',')]
    pub fp_targets: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub nifti: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub clip: Option<Vec<f64>>,
    /// Organ mask (VOL or .nii); voxels where it is 0 get --fill.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true, requires = "mask")]
    pub fill: Option<f64>,
    #[arg(long)]
    pub scale: bool,
}

#[derive(Debug, Args)]
pub struct SizesArgs {
    /// Glob over mask files (VOL headers or .nii).
    #[arg(long)]
    pub masks: String,
    #[arg(long, default_value = "tertiles")]
    pub mode: String,
    #[arg(long)]
    pub threshold_mm: Option<f64>,
    #[arg(long, default_value_t = 26)]
    pub connectivity: u8,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], default_values_t = [128usize, 128, 128])]
    pub size: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub lesion_prob: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pad_value: f64,
    #[arg(long)]
    pub prefix: PathBuf,
}

/// One case of an evaluation manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub pred: PathBuf,
    pub target: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Overrides the spacing stored with every target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing_mm: Option<[f64; 3]>,
}

impl Manifest {
    /// Reads a manifest; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::header(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            e.pred = base.join(&e.pred);
            e.target = base.join(&e.target);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Empty("manifest entries"));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.patient_id.as_str()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate patient_id {:?}",
                    e.patient_id
                )));
            }
        }
        Ok(())
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invariant(_) => EXIT_INTERNAL,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(err) => {
            eprintln!("iwseg: {err}");
            exit_code(&err)
        }
    }
}

fn configure_threads() {
    let Ok(v) = std::env::var(THREADS_ENV) else { return };
    match v.trim().parse::<usize>() {
        Ok(0) => {}
        Ok(n) => {
            if !crate::par::init_global_threads(n) {
                log::debug!("{THREADS_ENV}={n} ignored");
            }
        }
        Err(_) => log::warn!("ignoring unparsable {THREADS_ENV}={v:?}"),
    }
}

/// Runs a parsed command and returns its stdout text.
pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::Weights(a) => cmd_weights(&a),
        Command::Loss(a) => cmd_loss(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Convert(a) => cmd_convert(&a),
        Command::Sizes(a) => cmd_sizes(&a),
        Command::Sample(a) => cmd_sample(&a),
    }
}

fn is_nifti(path: &Path) -> bool {
    let s = path.to_string_lossy();
    s.ends_with(".nii") || s.ends_with(".nii.gz")
}

/// Loads a VOL header/stem or a `.nii` file.
pub fn load_any(path: &Path) -> Result<Volume> {
    if is_nifti(path) {
        load_nifti(path)
    } else {
        load_vol(path)
    }
}

fn triple(v: &[usize]) -> [usize; 3] {
    [v[0], v[1], v[2]]
}

fn to_json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn parse_size_mode(mode: &str, threshold_mm: Option<f64>) -> Result<SizeMode> {
    match (mode, threshold_mm) {
        ("clinical", Some(t)) => Ok(SizeMode::Clinical { threshold_mm: t }),
        ("clinical", None) => Err(Error::MissingHyperparameter("threshold-mm")),
        (m, Some(t)) if m != "clinical" => Err(Error::InvalidParameter(format!(
            "--threshold-mm {t} only applies to --mode clinical"
        ))),
        (m, _) => m.parse(),
    }
}

fn labeled_map(values: impl IntoIterator<Item = (usize, f64)>) -> BTreeMap<String, f64> {
    values.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn cmd_weights(a: &WeightsArgs) -> Result<String> {
    let connectivity = Connectivity::try_from(a.connectivity)?;
    let mask = load_any(&a.mask)?;
    let map = match (&a.patch_origin, &a.patch_size) {
        (Some(o), Some(s)) => {
            let (origin, size) = (triple(o), triple(s));
            if a.whole_image {
                let whole = inverse_weight_map(&mask, connectivity)?;
                let cropped = whole.crop(origin, size)?;
                check_weight_map(&whole, 1e-9, 1e-12)?;
                save_vol(&cropped.to_f32(), &a.out)?;
                whole
            } else {
                let patch = mask.crop(origin, size)?;
                let map = weights_from_components(label_components(&patch, connectivity)?);
                check_weight_map(&map, 1e-9, 1e-12)?;
                debug_assert_eq!(
                    map.to_volume(),
                    patch_weights(&mask, origin, size, connectivity, false)?
                );
                save_vol(&map.to_volume().to_f32(), &a.out)?;
                map
            }
        }
        _ => {
            let map = inverse_weight_map(&mask, connectivity)?;
            check_weight_map(&map, 1e-9, 1e-12)?;
            save_vol(&map.to_volume().to_f32(), &a.out)?;
            map
        }
    };
    let cs = map.components();
    Ok(to_json(&json!({
        "mask": a.mask,
        "out": a.out,
        "connectivity": connectivity,
        "whole_image": a.whole_image,
        "n_voxels": cs.n_voxels(),
        "k": cs.k(),
        "component_sizes": cs.sizes().iter().enumerate().map(|(k, &s)| (k.to_string(), s)).collect::<BTreeMap<_, _>>(),
        "component_weights": labeled_map(map.component_weights().iter().copied().enumerate()),
    })))
}

pub fn cmd_loss(a: &LossArgs) -> Result<String> {
    let kind: LossKind = a.loss.parse()?;
    let spec = LossSpec {
        kind,
        gamma: a.gamma,
        alpha: a.alpha,
        beta: a.beta,
        reduction: a.reduction.parse::<Reduction>()?,
        prob_clamp_eps: a.prob_eps,
        dice_eps: a.dice_eps,
        wce_weight_source: a.wce_source.parse::<WceWeightSource>()?,
    };
    spec.validate()?;
    let pred = load_any(&a.pred)?;
    let target = load_any(&a.target)?;
    pred.ensure_same_shape(&target)?;

    let map = if kind.is_inverse_weighted() {
        let m = inverse_weight_map(&target, Connectivity::try_from(a.connectivity)?)?;
        check_weight_map(&m, 1e-9, 1e-12)?;
        Some(m)
    } else {
        None
    };
    let result = evaluate_loss(&spec, &pred, &target, map.as_ref())?;
    if !result.value.is_finite() {
        return Err(Error::Invariant(format!("non-finite loss value {}", result.value)));
    }
    if let Some(path) = &a.grad_out {
        save_vol(&result.grad.to_f32(), path)?;
    }

    let mut out = json!({
        "kind": kind,
        "hyperparams": {
            "gamma": spec.gamma,
            "alpha": spec.alpha,
            "beta": spec.beta,
            "reduction": spec.reduction,
            "prob_clamp_eps": spec.prob_clamp_eps,
            "dice_eps": spec.dice_eps,
            "wce_weight_source": spec.wce_weight_source,
        },
        "value": result.value,
        "grad_path": a.grad_out,
    });
    if let Some(map) = &map {
        let contributions = if kind.is_pointwise() {
            let p = pred.to_f64_vec();
            Some(component_contributions(&spec, &p, target.as_u8()?, map)?)
        } else {
            None
        };
        let comps: Vec<_> = (0..map.component_weights().len())
            .map(|k| {
                json!({
                    "label": k,
                    "size": map.components().sizes()[k],
                    "weight": map.component_weights()[k],
                    "contribution": contributions.as_ref().map(|c| c[k]),
                })
            })
            .collect();
        out["components"] = json!(comps);
    }
    Ok(to_json(&out))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let manifest = Manifest::load(&a.manifest)?;
    let mut cases = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        let mut target = load_any(&e.target)?;
        if let Some(sp) = manifest.spacing_mm {
            target = target.with_spacing(sp)?;
        }
        let prob = load_any(&e.pred)?;
        target.ensure_same_shape(&prob)?;
        cases.push(Case::new(e.patient_id.clone(), target, prob));
    }
    cases.sort_by(|x, y| x.patient_id.cmp(&y.patient_id));

    let config = EvalConfig {
        froc: FrocConfig {
            thresholds: a.thresholds.clone().unwrap_or_else(default_thresholds),
            connectivity: Connectivity::try_from(a.connectivity)?,
            criterion: a.criterion.parse::<MatchCriterion>()?,
        },
        fp_targets: a.fp_targets.clone().unwrap_or_else(|| DEFAULT_FP_TARGETS.to_vec()),
        bootstrap: BootstrapConfig {
            n_iter: a.bootstrap_iters,
            frac: a.bootstrap_frac,
            seed: a.bootstrap_seed,
            with_replacement: a.with_replacement,
        },
        size_mode: parse_size_mode(&a.size_mode, a.threshold_mm)?,
        dice_threshold: a.dice_threshold,
        dice_aggregation: if a.per_patient_dice {
            DiceAggregation::PerPatient
        } else {
            DiceAggregation::Pooled
        },
    };
    let ev = evaluate(&cases, &config)?;
    ev.curve.check()?;
    let text = to_json(&ev.report);
    if let Some(path) = &a.out {
        fs::write(path, &text).map_err(|e| Error::io(path, e))?;
    }
    if let Some(path) = &a.froc_csv {
        fs::write(path, froc_csv(&ev.raw_points, &ev.curve)).map_err(|e| Error::io(path, e))?;
    }
    Ok(text)
}

fn binarize_any(v: &Volume) -> Result<Volume> {
    let n = v.len();
    v.with_data(VolumeData::U8((0..n).map(|i| u8::from(v.data().get_f64(i) != 0.0)).collect()))
}

pub fn cmd_convert(a: &ConvertArgs) -> Result<String> {
    let image = load_nifti(&a.nifti)?;
    let out = if a.clip.is_none() && a.mask.is_none() && !a.scale {
        image
    } else {
        let (clip_lo, clip_hi) = match &a.clip {
            Some(c) => (c[0], c[1]),
            None => (f64::NEG_INFINITY, f64::INFINITY),
        };
        let mask = a.mask.as_deref().map(load_any).transpose()?.map(|m| binarize_any(&m)).transpose()?;
        let outside_fill = match (&mask, a.fill) {
            (Some(_), Some(f)) => Some(f),
            (Some(_), None) if clip_lo.is_finite() => Some(clip_lo),
            (Some(_), None) => return Err(Error::MissingHyperparameter("fill")),
            (None, _) => None,
        };
        let config = PreprocessConfig {
            clip_lo,
            clip_hi,
            outside_fill,
            rescale: a.scale,
        };
        preprocess(&image, &config, mask.as_ref())?
    };
    save_vol(&out, &a.out)?;
    let values = out.to_f64_vec();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(to_json(&json!({
        "out": a.out,
        "shape": out.shape().0,
        "dtype": out.dtype().name(),
        "spacing_mm": out.spacing(),
        "min": lo,
        "max": hi,
    })))
}

pub fn cmd_sizes(a: &SizesArgs) -> Result<String> {
    let mode = parse_size_mode(&a.mode, a.threshold_mm)?;
    let connectivity = Connectivity::try_from(a.connectivity)?;
    let paths: Vec<PathBuf> = glob::glob(&a.masks)
        .map_err(|e| Error::InvalidParameter(format!("bad glob {:?}: {e}", a.masks)))?
        .filter_map(|p| p.ok())
        .collect();
    if paths.is_empty() {
        return Err(Error::InvalidParameter(format!("no masks match {:?}", a.masks)));
    }
    let mut rows = Vec::new();
    for path in &paths {
        let cs = label_components(&load_any(path)?, connectivity)?;
        for (k, d) in cs.lesion_diameters().into_iter().enumerate() {
            rows.push((path.clone(), k + 1, cs.sizes()[k + 1], d));
        }
    }
    let mut out = String::from("mask,label,voxels,diameter_mm,group\n");
    if rows.is_empty() {
        return Ok(out);
    }
    let diameters: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let groups = split_size_groups(&diameters, mode)?;
    for ((path, label, voxels, d), g) in rows.iter().zip(groups) {
        writeln!(out, "{},{label},{voxels},{d},{g}", path.display()).unwrap();
    }
    Ok(out)
}

fn numbered(prefix: &Path, tag: &str, k: usize) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(format!("_{tag}_{k}"));
    PathBuf::from(s)
}

pub fn cmd_sample(a: &SampleArgs) -> Result<String> {
    let base = PatchSpec {
        size: triple(&a.size),
        lesion_prob: a.lesion_prob,
        pad_value: a.pad_value,
        seed: a.seed,
    };
    base.validate()?;
    let image = load_any(&a.image)?;
    let mask = load_any(&a.mask)?;
    image.ensure_same_shape(&mask)?;

    let mut patches = Vec::with_capacity(a.n);
    for k in 0..a.n {
        // each patch has its own stream so any single patch can be regenerated
        let seed = a.seed.wrapping_add(k as u64);
        let mut sampler = PatchSampler::new(PatchSpec { seed, ..base })?;
        let patch = sampler.sample(&image, &mask)?;
        let img_path = numbered(&a.prefix, "img", k);
        let msk_path = numbered(&a.prefix, "msk", k);
        save_vol(&patch.image, &img_path)?;
        save_vol(&patch.mask, &msk_path)?;
        patches.push(json!({
            "k": k,
            "seed": seed,
            "origin": patch.origin,
            "lesion_biased": patch.lesion_biased,
            "image": crate::volume_io::vol_header_path(&img_path),
            "mask": crate::volume_io::vol_header_path(&msk_path),
        }));
    }
    let index = json!({
        "seed": a.seed,
        "size": base.size,
        "lesion_prob": base.lesion_prob,
        "pad_value": base.pad_value,
        "patches": patches,
    });
    let text = to_json(&index);
    let index_path = {
        let mut s = a.prefix.as_os_str().to_owned();
        s.push("_index.json");
        PathBuf::from(s)
    };
    fs::write(&index_path, &text).map_err(|e| Error::io(&index_path, e))?;
    Ok(text)
}
