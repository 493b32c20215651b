//! Connected-component labeling of binary 3D masks.
//!
//! Two-pass raster scan with a union-find over provisional labels. Final labels
//! `1..=K` follow the scan-order position of each component's first voxel, so
//! the output is fully determined by the mask and the connectivity.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume_io::{Shape, Volume, VolumeData};

/// Voxel adjacency used to grow components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [
        Connectivity::Six,
        Connectivity::Eighteen,
        Connectivity::TwentySix,
    ];

    pub fn count(self) -> u8 {
        match self {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }

    /// Max number of non-zero coordinates in a neighbour offset.
    fn max_nonzero(self) -> usize {
        match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        }
    }

    /// All neighbour offsets `(dz, dy, dx)`.
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::with_capacity(self.count() as usize);
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let nz = [dz, dy, dx].iter().filter(|&&d| d != 0).count();
                    if nz >= 1 && nz <= self.max_nonzero() {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that precede the current voxel in raster order.
    fn backward_offsets(self) -> Vec<[isize; 3]> {
        self.offsets()
            .into_iter()
            .filter(|o| (o[0], o[1], o[2]) < (0, 0, 0))
            .collect()
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(Error::InvalidParameter(format!(
                "connectivity must be 6, 18 or 26, got {other}"
            ))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        c.count()
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

/// Labeled partition of a mask: background `L_0` plus lesions `L_1..L_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    shape: Shape,
    spacing: [f64; 3],
    labels: Vec<u32>,
    sizes: Vec<usize>,
    connectivity: Connectivity,
}

impl ComponentSet {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    /// Per-voxel label, 0 for background.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Number of lesion components `K`.
    pub fn k(&self) -> usize {
        self.sizes.len() - 1
    }

    /// `[|L_0|, |L_1|, ..., |L_K|]`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    /// Total voxel count `N`.
    pub fn n_voxels(&self) -> usize {
        self.labels.len()
    }

    /// Linear indices of every voxel per label, in scan order.
    pub fn voxel_lists(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self.sizes.iter().map(|&s| Vec::with_capacity(s)).collect();
        for (i, &l) in self.labels.iter().enumerate() {
            out[l as usize].push(i);
        }
        out
    }

    /// Equivalent-sphere diameters of the lesions `L_1..L_K`, in mm.
    pub fn lesion_diameters(&self) -> Vec<f64> {
        self.sizes[1..]
            .iter()
            .map(|&s| sphere_diameter(s, self.spacing))
            .collect()
    }

    /// Labels as an i16 volume (fails when `K` exceeds `i16::MAX`).
    pub fn labels_volume(&self) -> Result<Volume> {
        if self.k() > i16::MAX as usize {
            return Err(Error::InvalidParameter(format!(
                "{} components do not fit in i16 labels",
                self.k()
            )));
        }
        Volume::new(
            self.shape,
            self.spacing,
            VolumeData::I16(self.labels.iter().map(|&l| l as i16).collect()),
        )
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // index 0 is the background sentinel
        DisjointSet { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        // keep the smaller id as root; smaller ids were created earlier in the scan
        let (keep, drop) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[drop as usize] = keep;
        keep
    }
}

/// Labels the foreground of a `{0,1}` u8 mask.
pub fn label_components(mask: &Volume, connectivity: Connectivity) -> Result<ComponentSet> {
    let m = mask.binary_mask()?;
    Ok(label_foreground(mask.shape(), mask.spacing(), connectivity, |i| m[i] != 0))
}

/// Labels voxels where `prob >= threshold`. `prob` may be any dtype.
pub fn label_thresholded(prob: &Volume, threshold: f64, connectivity: Connectivity) -> ComponentSet {
    let data = prob.data();
    label_foreground(prob.shape(), prob.spacing(), connectivity, |i| {
        data.get_f64(i) >= threshold
    })
}

pub(crate) fn label_foreground<F>(
    shape: Shape,
    spacing: [f64; 3],
    connectivity: Connectivity,
    is_fg: F,
) -> ComponentSet
where
    F: Fn(usize) -> bool,
{
    let [nz, ny, nx] = shape.dims();
    let n = shape.len();
    let mut labels = vec![0u32; n];
    let mut sets = DisjointSet::new();
    let backward = connectivity.backward_offsets();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = shape.index(z, y, x);
                if !is_fg(i) {
                    continue;
                }
                let mut current = 0u32;
                for o in &backward {
                    let (zz, yy, xx) = (z as isize + o[0], y as isize + o[1], x as isize + o[2]);
                    if zz < 0 || yy < 0 || xx < 0 || yy >= ny as isize || xx >= nx as isize {
                        continue;
                    }
                    let l = labels[shape.index(zz as usize, yy as usize, xx as usize)];
                    if l == 0 {
                        continue;
                    }
                    current = if current == 0 { l } else { sets.union(current, l) };
                }
                labels[i] = if current == 0 { sets.make() } else { current };
            }
        }
    }

    // Resolve roots and renumber by first appearance in scan order.
    let mut remap = vec![0u32; sets.parent.len()];
    let mut sizes = vec![0usize];
    for l in labels.iter_mut() {
        if *l == 0 {
            sizes[0] += 1;
            continue;
        }
        let root = sets.find(*l) as usize;
        if remap[root] == 0 {
            sizes.push(0);
            remap[root] = (sizes.len() - 1) as u32;
        }
        *l = remap[root];
        sizes[*l as usize] += 1;
    }

    ComponentSet {
        shape,
        spacing,
        labels,
        sizes,
        connectivity,
    }
}

fn sphere_diameter(voxels: usize, spacing: [f64; 3]) -> f64 {
    let volume = voxels as f64 * spacing[0] * spacing[1] * spacing[2];
    2.0 * (3.0 * volume / (4.0 * PI)).cbrt()
}

/// Diameter (mm) of the sphere whose volume equals `component_size` voxels at
/// the given `(z, y, x)` spacing.
pub fn equivalent_diameter(component_size: usize, spacing_mm: [f64; 3]) -> Result<f64> {
    if component_size == 0 {
        return Err(Error::InvalidParameter(
            "component size must be at least one voxel".into(),
        ));
    }
    if spacing_mm.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "spacing {spacing_mm:?} must be finite and positive"
        )));
    }
    Ok(sphere_diameter(component_size, spacing_mm))
}
