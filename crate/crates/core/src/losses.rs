//! Segmentation losses and their inverse-weighted variants, each with the
//! analytic gradient with respect to the predicted foreground probabilities.
//!
//! Pointwise losses (BCE, Focal, WCE) are reduced by mean or sum. The Dice
//! family (Dice, ASL, GDL) are global ratios over the whole volume.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::volume_io::{Volume, VolumeData};
use crate::weighting::WeightMap;

pub const FOCAL_GAMMA: f64 = 2.0;
pub const FOCAL_ALPHA: f64 = 0.75;
pub const ASL_BETA: f64 = 1.5;

pub const DEFAULT_PROB_CLAMP_EPS: f64 = 1e-7;
pub const DEFAULT_DICE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    IwBce,
    Focal,
    IwFocal,
    Wce,
    Dice,
    IwDice,
    Asl,
    IwAsl,
    Gdl,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::Bce,
        LossKind::IwBce,
        LossKind::Focal,
        LossKind::IwFocal,
        LossKind::Wce,
        LossKind::Dice,
        LossKind::IwDice,
        LossKind::Asl,
        LossKind::IwAsl,
        LossKind::Gdl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::IwBce => "iw_bce",
            LossKind::Focal => "focal",
            LossKind::IwFocal => "iw_focal",
            LossKind::Wce => "wce",
            LossKind::Dice => "dice",
            LossKind::IwDice => "iw_dice",
            LossKind::Asl => "asl",
            LossKind::IwAsl => "iw_asl",
            LossKind::Gdl => "gdl",
        }
    }

    pub fn is_inverse_weighted(self) -> bool {
        matches!(
            self,
            LossKind::IwBce | LossKind::IwFocal | LossKind::IwDice | LossKind::IwAsl
        )
    }

    /// Kinds whose value is a reduction of independent per-voxel terms.
    pub fn is_pointwise(self) -> bool {
        matches!(
            self,
            LossKind::Bce | LossKind::IwBce | LossKind::Focal | LossKind::IwFocal | LossKind::Wce
        )
    }

    pub fn uses_focal_params(self) -> bool {
        matches!(self, LossKind::Focal | LossKind::IwFocal)
    }

    pub fn uses_beta(self) -> bool {
        matches!(self, LossKind::Asl | LossKind::IwAsl)
    }

    /// The unweighted loss an `iw_*` kind modifies.
    pub fn base(self) -> LossKind {
        match self {
            LossKind::IwBce => LossKind::Bce,
            LossKind::IwFocal => LossKind::Focal,
            LossKind::IwDice => LossKind::Dice,
            LossKind::IwAsl => LossKind::Asl,
            other => other,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown loss kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

impl FromStr for Reduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reduction::Mean),
            "sum" => Ok(Reduction::Sum),
            other => Err(Error::InvalidParameter(format!("unknown reduction {other:?}"))),
        }
    }
}

/// Where the WCE foreground weight `(n - S) / S` takes `S` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WceWeightSource {
    /// `S = sum of predicted probabilities`.
    #[default]
    Pred,
    /// `S = number of ground-truth foreground voxels`.
    Gt,
}

impl FromStr for WceWeightSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred" => Ok(WceWeightSource::Pred),
            "gt" => Ok(WceWeightSource::Gt),
            other => Err(Error::InvalidParameter(format!("unknown WCE weight source {other:?}"))),
        }
    }
}

/// A loss kind plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub reduction: Reduction,
    pub prob_clamp_eps: f64,
    pub dice_eps: f64,
    pub wce_weight_source: WceWeightSource,
}

impl LossSpec {
    /// Spec with no hyperparameters set and default stabilisation constants.
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            gamma: None,
            alpha: None,
            beta: None,
            reduction: Reduction::Mean,
            prob_clamp_eps: DEFAULT_PROB_CLAMP_EPS,
            dice_eps: DEFAULT_DICE_EPS,
            wce_weight_source: WceWeightSource::Pred,
        }
    }

    /// Spec with the customary hyperparameters filled in for the kind.
    pub fn with_defaults(kind: LossKind) -> Self {
        let mut spec = LossSpec::new(kind);
        if kind.uses_focal_params() {
            spec.gamma = Some(FOCAL_GAMMA);
            spec.alpha = Some(FOCAL_ALPHA);
        }
        if kind.uses_beta() {
            spec.beta = Some(ASL_BETA);
        }
        spec
    }

    pub fn focal(gamma: f64, alpha: f64) -> Self {
        LossSpec {
            gamma: Some(gamma),
            alpha: Some(alpha),
            ..LossSpec::new(LossKind::Focal)
        }
    }

    pub fn asl(beta: f64) -> Self {
        LossSpec {
            beta: Some(beta),
            ..LossSpec::new(LossKind::Asl)
        }
    }

    pub fn with_kind(mut self, kind: LossKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    pub fn with_dice_eps(mut self, eps: f64) -> Self {
        self.dice_eps = eps;
        self
    }

    pub fn with_wce_source(mut self, source: WceWeightSource) -> Self {
        self.wce_weight_source = source;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.kind;
        let check_unused = |name: &str, v: Option<f64>, used: bool| -> Result<()> {
            if v.is_some() && !used {
                return Err(Error::InvalidParameter(format!(
                    "hyperparameter {name} is not used by {kind}"
                )));
            }
            Ok(())
        };
        check_unused("gamma", self.gamma, kind.uses_focal_params())?;
        check_unused("alpha", self.alpha, kind.uses_focal_params())?;
        check_unused("beta", self.beta, kind.uses_beta())?;

        if kind.uses_focal_params() {
            let gamma = self.gamma.ok_or(Error::MissingHyperparameter("gamma"))?;
            let alpha = self.alpha.ok_or(Error::MissingHyperparameter("alpha"))?;
            if !(gamma >= 0.0 && gamma.is_finite()) {
                return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
            }
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
            }
        }
        if kind.uses_beta() {
            let beta = self.beta.ok_or(Error::MissingHyperparameter("beta"))?;
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidParameter(format!("beta must be > 0, got {beta}")));
            }
        }
        if !(self.prob_clamp_eps > 0.0 && self.prob_clamp_eps < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "prob_clamp_eps must lie in (0, 0.5), got {}",
                self.prob_clamp_eps
            )));
        }
        if !(self.dice_eps >= 0.0 && self.dice_eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dice_eps must be >= 0, got {}",
                self.dice_eps
            )));
        }
        Ok(())
    }
}

/// Loss value and `d value / d p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Volume,
}

/// Evaluates `spec` on a probability map `p` (any float dtype, values in
/// `[0, 1]`) against a binary mask `y`. `weights` is required by the `iw_*`
/// kinds and rejected by the others.
pub fn evaluate_loss(
    spec: &LossSpec,
    p: &Volume,
    y: &Volume,
    weights: Option<&WeightMap>,
) -> Result<LossResult> {
    p.ensure_same_shape(y)?;
    if let Some(w) = weights {
        if w.shape() != p.shape() {
            return Err(Error::ShapeMismatch {
                left: p.shape().0,
                right: w.shape().0,
            });
        }
    }
    let probs = match p.data() {
        VolumeData::F64(v) => std::borrow::Cow::Borrowed(v.as_slice()),
        VolumeData::F32(_) => std::borrow::Cow::Owned(p.to_f64_vec()),
        other => {
            return Err(Error::DtypeMismatch {
                expected: "f32 or f64",
                actual: other.dtype().name(),
            })
        }
    };
    let (value, grad) = evaluate_slices(spec, &probs, y.binary_mask()?, weights.map(|w| w.weights()))?;
    Ok(LossResult {
        value,
        grad: p.with_data(VolumeData::F64(grad))?,
    })
}

fn check_inputs(spec: &LossSpec, p: &[f64], y: &[u8], w: Option<&[f64]>) -> Result<()> {
    spec.validate()?;
    if p.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "{} probabilities for {} labels",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Empty("probability map"));
    }
    match (spec.kind.is_inverse_weighted(), w) {
        (true, None) => {
            return Err(Error::InvalidParameter(format!("{} requires a weight map", spec.kind)))
        }
        (false, Some(_)) => {
            return Err(Error::InvalidParameter(format!(
                "{} does not take a weight map",
                spec.kind
            )))
        }
        (true, Some(w)) if w.len() != p.len() => {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} voxels",
                w.len(),
                p.len()
            )))
        }
        _ => {}
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidParameter(format!("probability {bad} outside [0, 1]")));
    }
    if let Some(&bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::NonBinaryMask(bad as f64));
    }
    Ok(())
}

/// Slice-level evaluation: returns `(value, gradient)`.
pub fn evaluate_slices(
    spec: &LossSpec,
    p: &[f64],
    y: &[u8],
    w: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(spec, p, y, w)?;
    let n = p.len();
    let scale = match spec.reduction {
        Reduction::Mean => 1.0 / n as f64,
        Reduction::Sum => 1.0,
    };
    let weight = |i: usize| w.map_or(1.0, |w| w[i]);

    match spec.kind {
        LossKind::Bce | LossKind::IwBce | LossKind::Focal | LossKind::IwFocal => {
            let term = pointwise_fn(spec);
            let value = scale * par::sum_by_index(n, |i| weight(i) * term(p[i], y[i]).0);
            let mut grad = vec![0.0; n];
            par::fill(&mut grad, |i| scale * weight(i) * term(p[i], y[i]).1);
            Ok((value, grad))
        }
        LossKind::Wce => wce(spec, p, y, scale),
        LossKind::Dice | LossKind::IwDice => Ok(dice(p, y, w, spec.dice_eps)),
        LossKind::Asl | LossKind::IwAsl => Ok(asl(p, y, w, spec.beta.unwrap(), spec.dice_eps)),
        LossKind::Gdl => Ok(gdl(p, y, spec.dice_eps)),
    }
}

/// Per-voxel unreduced terms of a pointwise kind (weight included for `iw_*`).
pub fn pointwise_terms(spec: &LossSpec, p: &[f64], y: &[u8], w: Option<&[f64]>) -> Result<Vec<f64>> {
    check_inputs(spec, p, y, w)?;
    if !spec.kind.is_pointwise() {
        return Err(Error::InvalidParameter(format!(
            "{} has no per-voxel decomposition",
            spec.kind
        )));
    }
    let mut out = vec![0.0; p.len()];
    if spec.kind == LossKind::Wce {
        let fg = wce_foreground_weight(spec, p, y)?;
        let eps = spec.prob_clamp_eps;
        par::fill(&mut out, |i| {
            let q = p[i].clamp(eps, 1.0 - eps);
            if y[i] == 1 {
                -fg * q.ln()
            } else {
                -(1.0 - q).ln()
            }
        });
    } else {
        let term = pointwise_fn(spec);
        par::fill(&mut out, |i| w.map_or(1.0, |w| w[i]) * term(p[i], y[i]).0);
    }
    Ok(out)
}

/// Unreduced loss mass carried by each component of `map` (index = label).
pub fn component_contributions(
    spec: &LossSpec,
    p: &[f64],
    y: &[u8],
    map: &WeightMap,
) -> Result<Vec<f64>> {
    let w = spec.kind.is_inverse_weighted().then(|| map.weights());
    let terms = pointwise_terms(spec, p, y, w)?;
    let mut out = vec![0.0; map.components().sizes().len()];
    for (&l, t) in map.components().labels().iter().zip(terms) {
        out[l as usize] += t;
    }
    Ok(out)
}

/// `(term, d term / d p)` of a BCE/Focal voxel, with `p` clamped away from 0
/// and 1. The clamp zeroes the derivative outside `[eps, 1 - eps]`.
fn pointwise_fn(spec: &LossSpec) -> impl Fn(f64, u8) -> (f64, f64) + Sync + Send {
    let eps = spec.prob_clamp_eps;
    let focal = spec.kind.uses_focal_params().then(|| (spec.gamma.unwrap(), spec.alpha.unwrap()));
    move |p: f64, y: u8| {
        let q = p.clamp(eps, 1.0 - eps);
        let live = if p < eps || p > 1.0 - eps { 0.0 } else { 1.0 };
        let (v, d) = match (focal, y) {
            (None, 1) => (-q.ln(), -1.0 / q),
            (None, _) => (-(1.0 - q).ln(), 1.0 / (1.0 - q)),
            (Some((gamma, alpha)), 1) => {
                // -alpha (1-q)^g ln q
                let m = (1.0 - q).powf(gamma);
                let dm = if gamma == 0.0 { 0.0 } else { -gamma * (1.0 - q).powf(gamma - 1.0) };
                (-alpha * m * q.ln(), -alpha * (dm * q.ln() + m / q))
            }
            (Some((gamma, alpha)), _) => {
                // -(1-alpha) q^g ln(1-q)
                let m = q.powf(gamma);
                let dm = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
                let l = (1.0 - q).ln();
                (-(1.0 - alpha) * m * l, -(1.0 - alpha) * (dm * l - m / (1.0 - q)))
            }
        };
        (v, d * live)
    }
}

fn wce_foreground_weight(spec: &LossSpec, p: &[f64], y: &[u8]) -> Result<f64> {
    let n = p.len() as f64;
    let s = match spec.wce_weight_source {
        WceWeightSource::Pred => par::sum_by_index(p.len(), |i| p[i]),
        WceWeightSource::Gt => par::sum_by_index(y.len(), |i| y[i] as f64),
    };
    if s <= 0.0 {
        return Err(Error::DegenerateWceWeight(match spec.wce_weight_source {
            WceWeightSource::Pred => "predicted probabilities sum to 0",
            WceWeightSource::Gt => "ground truth has no foreground",
        }));
    }
    Ok((n - s) / s)
}

fn wce(spec: &LossSpec, p: &[f64], y: &[u8], scale: f64) -> Result<(f64, Vec<f64>)> {
    let n = p.len();
    let eps = spec.prob_clamp_eps;
    let fg = wce_foreground_weight(spec, p, y)?;
    let clamp = |i: usize| p[i].clamp(eps, 1.0 - eps);
    let live = |i: usize| if p[i] < eps || p[i] > 1.0 - eps { 0.0 } else { 1.0 };

    // value = scale * (fg * A + B), A = -sum_{y=1} ln q, B = -sum_{y=0} ln(1-q)
    let a = par::sum_by_index(n, |i| if y[i] == 1 { -clamp(i).ln() } else { 0.0 });
    let b = par::sum_by_index(n, |i| if y[i] == 0 { -(1.0 - clamp(i)).ln() } else { 0.0 });
    let value = scale * (fg * a + b);

    // with a predicted-mass weight, fg = n/S - 1 also depends on every p_j
    let dfg = match spec.wce_weight_source {
        WceWeightSource::Pred => {
            let s = par::sum_by_index(n, |i| p[i]);
            -(n as f64) / (s * s)
        }
        WceWeightSource::Gt => 0.0,
    };
    let mut grad = vec![0.0; n];
    par::fill(&mut grad, |i| {
        let q = clamp(i);
        let local = if y[i] == 1 { -fg / q } else { 1.0 / (1.0 - q) };
        scale * (local * live(i) + dfg * a)
    });
    Ok((value, grad))
}

/// `1 - (2 sum w p y + e) / (sum w (p^2 + y^2) + e)`.
fn dice(p: &[f64], y: &[u8], w: Option<&[f64]>, eps: f64) -> (f64, Vec<f64>) {
    let n = p.len();
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let yf = |i: usize| y[i] as f64;
    let num = 2.0 * par::sum_by_index(n, |i| wt(i) * p[i] * yf(i)) + eps;
    let den = par::sum_by_index(n, |i| wt(i) * (p[i] * p[i] + yf(i))) + eps;
    let mut grad = vec![0.0; n];
    if den == 0.0 {
        return (0.0, grad);
    }
    let den2 = den * den;
    par::fill(&mut grad, |i| -wt(i) * (2.0 * yf(i) * den - 2.0 * p[i] * num) / den2);
    (1.0 - num / den, grad)
}

/// `1 - ((1 + b^2) sum w p y + e) / (sum w (b^2 y + p) + e)`.
fn asl(p: &[f64], y: &[u8], w: Option<&[f64]>, beta: f64, eps: f64) -> (f64, Vec<f64>) {
    let n = p.len();
    let b2 = beta * beta;
    let wt = |i: usize| w.map_or(1.0, |w| w[i]);
    let yf = |i: usize| y[i] as f64;
    let num = (1.0 + b2) * par::sum_by_index(n, |i| wt(i) * p[i] * yf(i)) + eps;
    let den = par::sum_by_index(n, |i| wt(i) * (b2 * yf(i) + p[i])) + eps;
    let mut grad = vec![0.0; n];
    if den == 0.0 {
        return (0.0, grad);
    }
    let den2 = den * den;
    par::fill(&mut grad, |i| -wt(i) * ((1.0 + b2) * yf(i) * den - num) / den2);
    (1.0 - num / den, grad)
}

/// Two-class generalised Dice with class weights `1 / (sum y_c + e)`, squared.
fn gdl(p: &[f64], y: &[u8], eps: f64) -> (f64, Vec<f64>) {
    let n = p.len();
    let yf = |i: usize| y[i] as f64;
    let fg_count = par::sum_by_index(n, yf);
    let bg_count = n as f64 - fg_count;
    let a1 = (1.0 / (fg_count + eps)).powi(2);
    let a2 = (1.0 / (bg_count + eps)).powi(2);

    let i1 = par::sum_by_index(n, |i| p[i] * yf(i));
    let i2 = par::sum_by_index(n, |i| (1.0 - p[i]) * (1.0 - yf(i)));
    let d1 = par::sum_by_index(n, |i| p[i] * p[i] + yf(i));
    let d2 = par::sum_by_index(n, |i| (1.0 - p[i]).powi(2) + (1.0 - yf(i)));

    let num = 2.0 * (a1 * i1 + a2 * i2) + eps;
    let den = a1 * d1 + a2 * d2 + eps;
    let mut grad = vec![0.0; n];
    if den == 0.0 {
        return (0.0, grad);
    }
    let den2 = den * den;
    par::fill(&mut grad, |i| {
        let dnum = 2.0 * (a1 * yf(i) - a2 * (1.0 - yf(i)));
        let dden = 2.0 * (a1 * p[i] - a2 * (1.0 - p[i]));
        -(dnum * den - num * dden) / den2
    });
    (1.0 - num / den, grad)
}
