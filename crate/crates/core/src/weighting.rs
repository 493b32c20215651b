//! Inverse weighting: every voxel of component `L_j` gets
//! `w_j = N / (M * |L_j|)`, where `N` is the voxel count of the patch and `M`
//! the number of non-empty components (`K + 1` unless the background is empty).
//!
//! Every component then carries the same total weight `N / M`, and the weights
//! sum to `N`.

use crate::components::{label_components, ComponentSet, Connectivity};
use crate::error::{Error, Result};
use crate::par;
use crate::volume_io::{Shape, Volume, VolumeData};

/// Per-voxel inverse weights together with the partition they came from.
#[derive(Debug, Clone)]
pub struct WeightMap {
    weights: Vec<f64>,
    component_weights: Vec<f64>,
    components: ComponentSet,
}

impl WeightMap {
    pub fn shape(&self) -> Shape {
        self.components.shape()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `[w_0, ..., w_K]`. `w_0` is 0 when the background is empty.
    pub fn component_weights(&self) -> &[f64] {
        &self.component_weights
    }

    pub fn components(&self) -> &ComponentSet {
        &self.components
    }

    /// Weights as an f64 volume with the mask's spacing.
    pub fn to_volume(&self) -> Volume {
        Volume::new(
            self.shape(),
            self.components.spacing(),
            VolumeData::F64(self.weights.clone()),
        )
        .expect("weight map matches its mask")
    }

    /// Restricts a map to a sub-block. The result keeps the weights of the
    /// source image, it is not renormalised to the block.
    pub fn crop(&self, origin: [usize; 3], size: [usize; 3]) -> Result<Volume> {
        self.to_volume().crop(origin, size)
    }
}

/// Inverse-weight map of a binary mask.
pub fn inverse_weight_map(mask: &Volume, connectivity: Connectivity) -> Result<WeightMap> {
    let components = label_components(mask, connectivity)?;
    Ok(weights_from_components(components))
}

/// Inverse weights for the `size` block at `origin` of `mask`.
///
/// By default the block is labeled on its own, so a lesion cut by the block
/// border is weighted by its in-block volume. With `whole_image` the weights
/// are computed on the full mask and then cropped.
pub fn patch_weights(
    mask: &Volume,
    origin: [usize; 3],
    size: [usize; 3],
    connectivity: Connectivity,
    whole_image: bool,
) -> Result<Volume> {
    if whole_image {
        inverse_weight_map(mask, connectivity)?.crop(origin, size)
    } else {
        Ok(inverse_weight_map(&mask.crop(origin, size)?, connectivity)?.to_volume())
    }
}

pub fn weights_from_components(components: ComponentSet) -> WeightMap {
    let n = components.n_voxels() as f64;
    let nonempty = components.sizes().iter().filter(|&&s| s > 0).count() as f64;
    let component_weights: Vec<f64> = components
        .sizes()
        .iter()
        .map(|&s| if s == 0 { 0.0 } else { n / (nonempty * s as f64) })
        .collect();

    let labels = components.labels();
    let mut weights = vec![0.0; labels.len()];
    par::fill(&mut weights, |i| component_weights[labels[i] as usize]);

    WeightMap {
        weights,
        component_weights,
        components,
    }
}

/// Checks the two defining identities of a map: weights sum to `N` (relative
/// `sum_tol`) and every non-empty component carries the same mass (relative
/// `mass_tol`).
pub fn check_weight_map(map: &WeightMap, sum_tol: f64, mass_tol: f64) -> Result<()> {
    let n = map.components.n_voxels() as f64;
    let total = par::sum_by_index(map.weights.len(), |i| map.weights[i]);
    if ((total - n) / n).abs() > sum_tol {
        return Err(Error::Invariant(format!(
            "weights sum to {total}, expected {n}"
        )));
    }
    let masses: Vec<f64> = map
        .components
        .sizes()
        .iter()
        .zip(&map.component_weights)
        .filter(|(&s, _)| s > 0)
        .map(|(&s, &w)| s as f64 * w)
        .collect();
    let first = masses[0];
    if let Some(bad) = masses.iter().find(|&&m| ((m - first) / first).abs() > mass_tol) {
        return Err(Error::Invariant(format!(
            "component masses differ: {first} vs {bad}"
        )));
    }
    if map.weights.iter().any(|&w| w.is_nan() || w <= 0.0) {
        return Err(Error::Invariant("non-positive voxel weight".into()));
    }
    Ok(())
}
