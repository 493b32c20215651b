//! Volumetric toolkit for lesion-size-balanced segmentation.
//!
//! - [`weighting`]: inverse-weight maps that give every connected lesion, and
//!   the background, the same total weight.
//! - [`losses`]: BCE, Focal, WCE, Dice, ASL and GDL plus inverse-weighted
//!   variants, with analytic gradients.
//! - [`detection`]: lesion matching, object Dice, FROC curves, average recall
//!   and bootstrap summaries.
//! - [`components`], [`volume_io`], [`sampler`]: labeling, I/O and patch
//!   sampling underneath.
//!
//! Data-parallel loops go through [`par`]; build with
//! `--no-default-features` for a single-threaded library.

pub mod cli;
pub mod components;
pub mod detection;
pub mod error;
pub mod losses;
pub mod par;
pub mod sampler;
pub mod volume_io;
pub mod weighting;

pub use components::{equivalent_diameter, label_components, ComponentSet, Connectivity};
pub use error::{Error, Result};
pub use losses::{evaluate_loss, LossKind, LossResult, LossSpec, Reduction};
pub use volume_io::{load_nifti, load_vol, preprocess, save_vol, DType, PreprocessConfig, Shape, Volume, VolumeData};
pub use weighting::{inverse_weight_map, WeightMap};
