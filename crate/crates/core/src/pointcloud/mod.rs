//! Colored point clouds: PLY I/O, statistical outlier removal, voxel-grid
//! downsampling to a target count, pose normalization and recoloring.

mod io;
mod kdtree;

use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Label;
use crate::{par, rng};

pub use io::{load_ply, read_ply, save_ply, write_ply, Encoding};
pub use kdtree::KdTree;

pub const DEFAULT_K_NEIGHBORS: usize = 20;
pub const DEFAULT_STD_RATIO: f64 = 2.0;
pub const DEFAULT_TARGET_POINTS: usize = 100_000;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unsupported or missing property: {0}")]
    UnsupportedProperty(String),
    #[error("need more than {need} points, have {have}")]
    TooFewPoints { have: usize, need: usize },
    #[error("cloud has zero extent")]
    DegenerateCloud,
    #[error("cloud is empty")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
    pub label: Option<Label>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    pub fn bounding_box(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.points.first()?.position;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(&p.position), hi.sup(&p.position))
        }))
    }
}

/// Mean distance from each point to its `k` nearest other points.
pub fn mean_knn_distances(positions: &[Vector3<f64>], k: usize) -> Vec<f64> {
    let tree = KdTree::build(positions);
    par::map_range(positions.len(), |i| {
        let nn = tree.nearest(&positions[i], k, Some(i));
        if nn.is_empty() {
            return 0.0;
        }
        nn.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / nn.len() as f64
    })
}

/// Statistical outlier removal: drops points whose mean k-NN distance
/// exceeds the global mean of that statistic plus `std_ratio` standard
/// deviations (sample deviation, as in the common point-cloud libraries).
pub fn remove_outliers(
    cloud: &PointCloud,
    k_neighbors: usize,
    std_ratio: f64,
) -> Result<(PointCloud, usize), PointCloudError> {
    if k_neighbors < 1 {
        return Err(PointCloudError::InvalidArgument("k_neighbors must be >= 1".into()));
    }
    if !(std_ratio > 0.0) {
        return Err(PointCloudError::InvalidArgument("std_ratio must be > 0".into()));
    }
    if cloud.len() <= k_neighbors {
        return Err(PointCloudError::TooFewPoints {
            have: cloud.len(),
            need: k_neighbors,
        });
    }
    let stat = mean_knn_distances(&cloud.positions(), k_neighbors);
    let n = stat.len() as f64;
    let mean = stat.iter().sum::<f64>() / n;
    let var = stat.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let threshold = mean + std_ratio * var.sqrt();
    let points: Vec<Point> = cloud
        .points
        .iter()
        .zip(&stat)
        .filter(|(_, &d)| d <= threshold)
        .map(|(p, _)| p.clone())
        .collect();
    let removed = cloud.len() - points.len();
    Ok((PointCloud { points }, removed))
}

fn voxel_keys(cloud: &PointCloud, origin: &Vector3<f64>, edge: f64) -> Vec<u128> {
    par::map_slice(&cloud.points, |p| {
        let c = (p.position - origin) / edge;
        let q = |v: f64| (v.floor().max(0.0) as u128).min((1u128 << 42) - 1);
        (q(c.x) << 84) | (q(c.y) << 42) | q(c.z)
    })
}

fn voxel_count(cloud: &PointCloud, origin: &Vector3<f64>, edge: f64) -> usize {
    let mut keys = voxel_keys(cloud, origin, edge);
    par::sort_unstable(&mut keys);
    let mut count = 0;
    let mut last = None;
    for k in keys {
        if Some(k) != last {
            count += 1;
            last = Some(k);
        }
    }
    count
}

/// Voxel-grid downsampling to roughly `target_points` points. Returns the
/// downsampled cloud and the chosen voxel edge length (0 when the cloud
/// already had at most `target_points` points and was passed through).
pub fn voxel_downsample_with_size(cloud: &PointCloud, target_points: usize) -> (PointCloud, f64) {
    let target = target_points.max(1);
    if cloud.len() <= target {
        return (cloud.clone(), 0.0);
    }
    let (lo, hi) = cloud.bounding_box().expect("nonempty");
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        let mut c = centroid_voxels(cloud, &lo, 1.0);
        c.points.truncate(target);
        return (c, 0.0);
    }

    let within = |n: usize| {
        let (n, t) = (n as f64, target as f64);
        n >= 0.9 * t && n <= 1.1 * t
    };
    // count is non-increasing (approximately) in edge length
    let mut big = extent * 1.0001;
    let mut small = extent / (cloud.len() as f64).cbrt() / 4.0;
    let mut best = (usize::MAX, big);
    let consider = |edge: f64, n: usize, best: &mut (usize, f64)| {
        let gap = n.abs_diff(target);
        if gap < best.0 {
            *best = (gap, edge);
        }
    };
    let mut n_small = voxel_count(cloud, &lo, small);
    consider(small, n_small, &mut best);
    let mut guard = 0;
    while n_small < target && guard < 64 {
        big = small;
        small /= 2.0;
        n_small = voxel_count(cloud, &lo, small);
        consider(small, n_small, &mut best);
        guard += 1;
    }
    if !within(n_small) {
        for _ in 0..60 {
            let mid = (small * big).sqrt();
            let n = voxel_count(cloud, &lo, mid);
            consider(mid, n, &mut best);
            if within(n) {
                break;
            }
            if n > target {
                small = mid;
            } else {
                big = mid;
            }
            if big / small < 1.0 + 1e-12 {
                break;
            }
        }
    }
    let edge = best.1;
    (centroid_voxels(cloud, &lo, edge), edge)
}

pub fn voxel_downsample(cloud: &PointCloud, target_points: usize) -> PointCloud {
    voxel_downsample_with_size(cloud, target_points).0
}

/// Replaces each occupied voxel's members by their centroid (position and
/// color mean, majority label). Output is ordered by voxel key, members are
/// summed in input order.
fn centroid_voxels(cloud: &PointCloud, origin: &Vector3<f64>, edge: f64) -> PointCloud {
    let keys = voxel_keys(cloud, origin, edge);
    let mut order: Vec<(u128, u32)> = keys
        .iter()
        .enumerate()
        .map(|(i, &k)| (k, i as u32))
        .collect();
    par::sort_unstable(&mut order);

    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || order[i].0 != order[start].0 {
            groups.push((start, i));
            start = i;
        }
    }
    let points = par::map_slice(&groups, |&(s, e)| {
        let n = (e - s) as f64;
        let mut pos = Vector3::zeros();
        let mut col = Vector3::zeros();
        let mut votes = [0usize; 4];
        let mut any_label = false;
        for &(_, i) in &order[s..e] {
            let p = &cloud.points[i as usize];
            pos += p.position;
            col += p.color;
            if let Some(l) = p.label {
                votes[l as usize] += 1;
                any_label = true;
            }
        }
        let label = if any_label {
            // max_by_key keeps the last maximum; iterate reversed so ties go
            // to the smallest label
            (0..4u8)
                .rev()
                .max_by_key(|&l| votes[l as usize])
                .and_then(Label::from_index)
        } else {
            None
        };
        Point {
            position: pos / n,
            color: (col / n).map(|c| c.clamp(0.0, 1.0)),
            label,
        }
    });
    PointCloud { points }
}

/// Uniform scale plus translation: `p' = scale * p + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub offset: [f64; 3],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            offset: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p * self.scale + Vector3::from(self.offset)
    }

    pub fn inverse(&self) -> Self {
        Self {
            scale: 1.0 / self.scale,
            offset: (-Vector3::from(self.offset) / self.scale).into(),
        }
    }
}

/// Centers the bounding box on the origin and scales the largest box edge
/// to `target_extent`.
pub fn normalize_pose(
    cloud: &PointCloud,
    target_extent: f64,
) -> Result<(PointCloud, SimilarityTransform), PointCloudError> {
    let (lo, hi) = cloud.bounding_box().ok_or(PointCloudError::Empty)?;
    if !(target_extent > 0.0) {
        return Err(PointCloudError::InvalidArgument("target extent must be > 0".into()));
    }
    let extent = (hi - lo).max();
    if !(extent > 0.0) {
        return Err(PointCloudError::DegenerateCloud);
    }
    let center = (lo + hi) * 0.5;
    let scale = target_extent / extent;
    let t = SimilarityTransform {
        scale,
        offset: (-center * scale).into(),
    };
    let points = cloud
        .points
        .iter()
        .map(|p| Point {
            position: t.apply(&p.position),
            ..p.clone()
        })
        .collect();
    Ok((PointCloud { points }, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecolorMode {
    Original,
    Black,
    White,
    Noise,
}

impl FromStr for RecolorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Self::Original),
            "black" => Ok(Self::Black),
            "white" => Ok(Self::White),
            "noise" => Ok(Self::Noise),
            other => Err(format!("unknown recolor mode '{other}' (original|black|white|noise)")),
        }
    }
}

impl fmt::Display for RecolorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::Black => "black",
            Self::White => "white",
            Self::Noise => "noise",
        })
    }
}

/// Color ablations: constant black or white, or independent per-channel
/// noise over the 256 8-bit levels.
pub fn recolor(cloud: &PointCloud, mode: RecolorMode, seed: u64) -> PointCloud {
    let mut out = cloud.clone();
    match mode {
        RecolorMode::Original => {}
        RecolorMode::Black => out.points.iter_mut().for_each(|p| p.color = Vector3::zeros()),
        RecolorMode::White => out.points.iter_mut().for_each(|p| p.color = Vector3::repeat(1.0)),
        RecolorMode::Noise => par::for_each_chunk_mut(&mut out.points, 4096, |ci, chunk| {
            let mut r = rng::stream_rng(seed, ci as u64);
            for p in chunk {
                p.color = Vector3::from_fn(|_, _| r.gen_range(0..=255u32) as f64 / 255.0);
            }
        }),
    }
    out
}
