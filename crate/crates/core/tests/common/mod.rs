//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's labeling, matching or curve code.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use iwseg::{Shape, Volume};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random binary mask with each side in `1..=max_side` and a random density.
pub fn random_mask<R: Rng>(rng: &mut R, max_side: usize) -> Volume {
    let shape = Shape::new(
        rng.gen_range(1..=max_side),
        rng.gen_range(1..=max_side),
        rng.gen_range(1..=max_side),
    );
    let density: f64 = rng.gen();
    let data = (0..shape.len()).map(|_| u8::from(rng.gen::<f64>() < density)).collect();
    Volume::from_u8(shape, data)
}

fn neighbour_offsets(connectivity: u8) -> Vec<[i64; 3]> {
    let limit = match connectivity {
        6 => 1,
        18 => 2,
        26 => 3,
        c => panic!("connectivity {c}"),
    };
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let manhattan = dz.abs() + dy.abs() + dx.abs();
                if manhattan > 0 && manhattan <= limit {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

/// Flood-fill labeling of `fg` voxels. Labels start at 1 and follow the scan
/// order of each component's first voxel; background stays 0.
pub fn bfs_labels(dims: [usize; 3], fg: &[bool], connectivity: u8) -> (Vec<u32>, Vec<usize>) {
    let [nz, ny, nx] = dims;
    let offsets = neighbour_offsets(connectivity);
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = vec![fg.iter().filter(|&&f| !f).count()];
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (z, y, x) = ((i / (ny * nx)) as i64, ((i / nx) % ny) as i64, (i % nx) as i64);
            for d in &offsets {
                let (zz, yy, xx) = (z + d[0], y + d[1], x + d[2]);
                if zz < 0 || yy < 0 || xx < 0 || zz >= nz as i64 || yy >= ny as i64 || xx >= nx as i64 {
                    continue;
                }
                let j = (zz as usize * ny + yy as usize) * nx + xx as usize;
                if fg[j] && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

pub fn mask_fg(mask: &Volume) -> Vec<bool> {
    mask.as_u8().unwrap().iter().map(|&v| v == 1).collect()
}

/// One synthetic patient for the FROC oracle.
pub struct OracleCase {
    pub id: String,
    pub target: Volume,
    pub prob: Volume,
}

/// Random dataset of up to `max_patients` cases with sides up to `max_side`,
/// with at least one lesion overall. Probabilities are quantised to 1/20 so
/// many of them sit exactly on grid thresholds.
pub fn random_dataset<R: Rng>(rng: &mut R, max_patients: usize, max_side: usize) -> Vec<OracleCase> {
    loop {
        let n = rng.gen_range(1..=max_patients);
        let cases: Vec<OracleCase> = (0..n)
            .map(|i| {
                let target = random_mask(rng, max_side);
                let prob: Vec<f64> = target
                    .as_u8()
                    .unwrap()
                    .iter()
                    .map(|&t| {
                        // lesions tend to score high, background low, with overlap
                        let centre = if t == 1 { 0.65 } else { 0.3 };
                        let raw: f64 = centre + rng.gen_range(-0.45..0.45);
                        (raw.clamp(0.0, 1.0) * 20.0).round() / 20.0
                    })
                    .collect();
                OracleCase {
                    id: format!("case{i:02}"),
                    prob: Volume::from_f64(target.shape(), prob),
                    target,
                }
            })
            .collect();
        if cases.iter().any(|c| c.target.as_u8().unwrap().contains(&1)) {
            return cases;
        }
    }
}

/// Brute-force FROC raw points: for every threshold and case, re-label
/// prediction and target from scratch and count found lesions and FPs.
pub fn oracle_raw_points(cases: &[OracleCase], thresholds: &[f64], connectivity: u8) -> Vec<(f64, f64)> {
    let total: usize = cases
        .iter()
        .map(|c| bfs_labels(c.target.shape().0, &mask_fg(&c.target), connectivity).1.len() - 1)
        .sum();
    thresholds
        .iter()
        .map(|&t| {
            let (mut fp, mut found) = (0usize, 0usize);
            for c in cases {
                let dims = c.target.shape().0;
                let (gt, gt_sizes) = bfs_labels(dims, &mask_fg(&c.target), connectivity);
                let pfg: Vec<bool> = c.prob.to_f64_vec().iter().map(|&p| p >= t).collect();
                let (pl, p_sizes) = bfs_labels(dims, &pfg, connectivity);
                for lesion in 1..gt_sizes.len() as u32 {
                    if (0..gt.len()).any(|i| gt[i] == lesion && pl[i] != 0) {
                        found += 1;
                    }
                }
                for comp in 1..p_sizes.len() as u32 {
                    if !(0..pl.len()).any(|i| pl[i] == comp && gt[i] != 0) {
                        fp += 1;
                    }
                }
            }
            (fp as f64 / cases.len() as f64, found as f64 / total as f64)
        })
        .collect()
}

/// Envelope of raw `(fp, recall)` points: best recall per distinct fp, sorted
/// by fp, then running maximum of recall.
pub fn oracle_envelope(raw: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut fps: Vec<f64> = raw.iter().map(|p| p.0).collect();
    fps.sort_by(f64::total_cmp);
    fps.dedup();
    let mut out: Vec<(f64, f64)> = Vec::new();
    for fp in fps {
        let best = raw.iter().filter(|p| p.0 == fp).map(|p| p.1).fold(0.0, f64::max);
        let running = out.last().map_or(best, |l| l.1.max(best));
        out.push((fp, running));
    }
    out
}

/// Piecewise-linear recall at `fp`; segment from (0, 0) to the first point
/// when it lies right of zero; constant after the last point.
pub fn oracle_recall_at(curve: &[(f64, f64)], fp: f64) -> f64 {
    let mut knots = Vec::with_capacity(curve.len() + 1);
    if curve[0].0 > 0.0 {
        knots.push((0.0, 0.0));
    }
    knots.extend_from_slice(curve);
    if let Some(k) = knots.iter().find(|k| k.0 == fp) {
        return k.1;
    }
    match knots.iter().position(|k| k.0 > fp) {
        None => knots.last().unwrap().1,
        Some(0) => knots[0].1,
        Some(j) => {
            let (f0, r0) = knots[j - 1];
            let (f1, r1) = knots[j];
            r0 + (r1 - r0) * (fp - f0) / (f1 - f0)
        }
    }
}

pub fn oracle_average_recall(curve: &[(f64, f64)], targets: &[f64]) -> f64 {
    targets.iter().map(|&t| oracle_recall_at(curve, t)).sum::<f64>() / targets.len() as f64
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute norm when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(a.iter().copied()).max(norm(b.iter().copied()));
    if scale < 1e-300 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Minimal single-file NIfTI-1 image, little-endian, 3D.
pub struct NiftiFixture {
    /// (nx, ny, nz) as stored in `dim[1..=3]`.
    pub dim: [i16; 3],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 3],
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub payload: Vec<u8>,
}

impl NiftiFixture {
    pub fn f32(dim: [i16; 3], pixdim: [f32; 3], values: &[f32]) -> Self {
        NiftiFixture {
            dim,
            datatype: 16,
            bitpix: 32,
            pixdim,
            scl_slope: 0.0,
            scl_inter: 0.0,
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn i16(dim: [i16; 3], pixdim: [f32; 3], values: &[i16]) -> Self {
        NiftiFixture {
            datatype: 4,
            bitpix: 16,
            payload: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ..NiftiFixture::f32(dim, pixdim, &[])
        }
    }

    pub fn bytes(&self) -> Vec<u8> {
        let mut h = vec![0u8; 352];
        h[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dims = [3, self.dim[0], self.dim[1], self.dim[2], 1, 1, 1, 1];
        for (k, d) in dims.iter().enumerate() {
            h[40 + 2 * k..42 + 2 * k].copy_from_slice(&d.to_le_bytes());
        }
        h[70..72].copy_from_slice(&self.datatype.to_le_bytes());
        h[72..74].copy_from_slice(&self.bitpix.to_le_bytes());
        let pix = [1.0f32, self.pixdim[0], self.pixdim[1], self.pixdim[2], 0.0, 0.0, 0.0, 0.0];
        for (k, p) in pix.iter().enumerate() {
            h[76 + 4 * k..80 + 4 * k].copy_from_slice(&p.to_le_bytes());
        }
        h[108..112].copy_from_slice(&352f32.to_le_bytes());
        h[112..116].copy_from_slice(&self.scl_slope.to_le_bytes());
        h[116..120].copy_from_slice(&self.scl_inter.to_le_bytes());
        h[344..348].copy_from_slice(b"n+1\0");
        h.extend_from_slice(&self.payload);
        h
    }
}
