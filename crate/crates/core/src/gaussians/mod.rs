//! The optimizable Gaussian-splat scene, its initialization from point
//! clouds and large-Gaussian culling.
//!
//! Each Gaussian stores raw (pre-activation) parameters:
//!
//! * `position`: center in scene units
//! * `log_scale`: per-axis log standard deviation, activated with `exp`
//! * `rotation`: quaternion `(w, x, y, z)`, kept unit length
//! * `opacity_logit`: activated with the logistic sigmoid
//! * `sh_dc`: degree-0 SH coefficients, color `0.5 + SH_C0 * sh_dc`
//!
//! The covariance is never stored; renderers rebuild
//! `Σ = R diag(s²) Rᵀ` from scale and rotation.

mod io;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector4};
use thiserror::Error;

use crate::pointcloud::{mean_knn_distances, PointCloud};
use crate::rng;

pub use io::{load_scene, read_scene, save_scene, write_scene};

/// Degree-0 real spherical harmonic constant `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const DEFAULT_CULL_THRESHOLD: f64 = 3.0;
/// Fallback isotropic scale when the cloud is too small for 3-NN.
pub const FALLBACK_SCALE: f64 = 0.01;
const MIN_SCALE: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum GaussianError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("missing property '{0}'")]
    MissingProperty(String),
    #[error("scene is empty")]
    Empty,
    #[error("culling would remove all {0} Gaussians")]
    EmptyResult(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sh_to_color(sh: f64) -> f64 {
    0.5 + SH_C0 * sh
}

pub fn color_to_sh(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

/// One Gaussian's parameters, used for construction and inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    pub sh_dc: Vector3<f64>,
}

impl Gaussian {
    /// Isotropic Gaussian from activated values.
    pub fn isotropic(position: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            position,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: logit(opacity),
            sh_dc: color.map(color_to_sh),
        }
    }
}

/// Structure-of-arrays scene; all arrays have equal length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh_dc: Vec<Vector3<f64>>,
}

impl GaussianScene {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gs: impl IntoIterator<Item = Gaussian>) -> Self {
        let mut s = Self::new();
        for g in gs {
            s.push(g);
        }
        s
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.log_scales.push(g.log_scale);
        self.rotations.push(g.rotation);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_dc.push(g.sh_dc);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            opacity_logit: self.opacity_logits[i],
            sh_dc: self.sh_dc[i],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_consistent(&self) -> bool {
        let n = self.len();
        self.log_scales.len() == n
            && self.rotations.len() == n
            && self.opacity_logits.len() == n
            && self.sh_dc.len() == n
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    /// Unclamped degree-0 color.
    pub fn color(&self, i: usize) -> Vector3<f64> {
        self.sh_dc[i].map(sh_to_color)
    }

    pub fn rotation_matrix(&self, i: usize) -> Matrix3<f64> {
        let q = self.rotations[i];
        UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
            .to_rotation_matrix()
            .into_inner()
    }

    /// World-space covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self, i: usize) -> Matrix3<f64> {
        let m = self.rotation_matrix(i) * Matrix3::from_diagonal(&self.scale(i));
        m * m.transpose()
    }

    /// Renormalizes every quaternion; degenerate ones reset to identity.
    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.norm();
            if n > 1e-12 && n.is_finite() {
                *q /= n;
            } else {
                *q = Vector4::new(1.0, 0.0, 0.0, 0.0);
            }
        }
    }

    /// Keeps the Gaussians for which `keep` is true, preserving order.
    pub fn retain_mask(&self, keep: &[bool]) -> GaussianScene {
        let pick = |i: &usize| keep[*i];
        let idx: Vec<usize> = (0..self.len()).filter(pick).collect();
        GaussianScene {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            log_scales: idx.iter().map(|&i| self.log_scales[i]).collect(),
            rotations: idx.iter().map(|&i| self.rotations[i]).collect(),
            opacity_logits: idx.iter().map(|&i| self.opacity_logits[i]).collect(),
            sh_dc: idx.iter().map(|&i| self.sh_dc[i]).collect(),
        }
    }

    /// Order-sensitive 64-bit fingerprint of every parameter bit.
    pub fn fingerprint(&self) -> u64 {
        let mut h = rng::mix64(self.len() as u64);
        let mut eat = |v: f64| h = rng::mix64(h ^ v.to_bits());
        for i in 0..self.len() {
            self.positions[i].iter().for_each(|&v| eat(v));
            self.log_scales[i].iter().for_each(|&v| eat(v));
            self.rotations[i].iter().for_each(|&v| eat(v));
            eat(self.opacity_logits[i]);
            self.sh_dc[i].iter().for_each(|&v| eat(v));
        }
        h
    }

    /// Axis-aligned bounds of the centers.
    pub fn bounding_box(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.positions.first()?;
        Some(
            self.positions
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitParams {
    /// Multiplier on the mean distance to the 3 nearest neighbors.
    pub scale_multiplier: f64,
    pub initial_opacity: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        Self {
            scale_multiplier: 1.0,
            initial_opacity: 0.1,
        }
    }
}

/// One Gaussian per point: center at the point, color inverse-mapped to
/// `sh_dc`, isotropic scale from the mean 3-NN distance, identity rotation
/// and uniform opacity. Clouds with fewer than 4 points fall back to a fixed
/// scale of [`FALLBACK_SCALE`].
pub fn init_from_pointcloud(cloud: &PointCloud, params: &InitParams) -> Result<GaussianScene, GaussianError> {
    if cloud.is_empty() {
        return Err(GaussianError::Empty);
    }
    if !(params.scale_multiplier > 0.0) {
        return Err(GaussianError::InvalidArgument("scale multiplier must be > 0".into()));
    }
    if !(params.initial_opacity > 0.0 && params.initial_opacity < 1.0) {
        return Err(GaussianError::InvalidArgument("initial opacity must be in (0,1)".into()));
    }
    let scales = if cloud.len() < 4 {
        log::warn!(
            "cloud has {} points, too few for 3-NN scales; using {FALLBACK_SCALE}",
            cloud.len()
        );
        vec![FALLBACK_SCALE; cloud.len()]
    } else {
        mean_knn_distances(&cloud.positions(), 3)
            .into_iter()
            .map(|d| (d * params.scale_multiplier).max(MIN_SCALE))
            .collect()
    };
    let opacity_logit = logit(params.initial_opacity);
    let mut scene = GaussianScene::new();
    for (p, s) in cloud.points.iter().zip(scales) {
        scene.push(Gaussian {
            position: p.position,
            log_scale: Vector3::repeat(s.ln()),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit,
            sh_dc: p.color.map(color_to_sh),
        });
    }
    Ok(scene)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CullStats {
    /// Norm of the activated scale vector per Gaussian.
    pub volumes: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `volumes`.
    pub std: f64,
    pub threshold_c: f64,
}

impl CullStats {
    pub fn compute(scene: &GaussianScene, threshold_c: f64) -> Self {
        let volumes: Vec<f64> = (0..scene.len()).map(|i| scene.scale(i).norm()).collect();
        let n = volumes.len().max(1) as f64;
        // Shifting by the minimum keeps the statistics exact for a
        // population of identical values.
        let lo = volumes.iter().copied().fold(f64::INFINITY, f64::min);
        let lo = if lo.is_finite() { lo } else { 0.0 };
        let mean = lo + volumes.iter().map(|v| v - lo).sum::<f64>() / n;
        let std = (volumes.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        Self {
            volumes,
            mean,
            std,
            threshold_c,
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.mean + self.threshold_c * self.std
    }

    pub fn is_culled(&self, i: usize) -> bool {
        self.volumes[i] > self.cutoff()
    }
}

/// Removes every Gaussian whose scale norm exceeds `mean + c * std` of the
/// norms over the input scene. Statistics are computed once, before any
/// removal.
pub fn cull_large(scene: &GaussianScene, c: f64) -> Result<(GaussianScene, usize), GaussianError> {
    if scene.is_empty() {
        return Err(GaussianError::Empty);
    }
    if !(c > 0.0) {
        return Err(GaussianError::InvalidArgument(format!("cull threshold must be > 0, got {c}")));
    }
    let stats = CullStats::compute(scene, c);
    let keep: Vec<bool> = (0..scene.len()).map(|i| !stats.is_culled(i)).collect();
    let culled = keep.iter().filter(|k| !**k).count();
    if culled == scene.len() {
        return Err(GaussianError::EmptyResult(culled));
    }
    Ok((scene.retain_mask(&keep), culled))
}
