//! Per-Gaussian projection to screen space, keeping every intermediate the
//! backward pass needs.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use super::Camera;
use crate::gaussians::{sigmoid, GaussianScene, SH_C0};

/// Isotropic screen-space dilation added to every projected covariance.
pub const DILATION: f64 = 0.3;
/// Contributions below this alpha are skipped.
pub const ALPHA_CUTOFF: f64 = 1.0 / 255.0;

#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub t: Vector3<f64>,
    pub jac: Matrix2x3<f64>,
    pub cov_cam: Matrix3<f64>,
    pub conic: Matrix2<f64>,
    pub mean: Vector2<f64>,
    pub rot: Matrix3<f64>,
    pub scale: Vector3<f64>,
    pub quat: Vector4<f64>,
    pub quat_norm: f64,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Per-channel flag: the color was inside `[0,1]` before clamping.
    pub color_live: [bool; 3],
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
}

impl Projection {
    /// Opacity of this Gaussian at pixel center `(px, py)` before cutoff,
    /// together with the Gaussian falloff factor.
    #[inline]
    pub fn alpha_at(&self, px: f64, py: f64) -> (f64, f64) {
        let dx = px - self.mean.x;
        let dy = py - self.mean.y;
        let k = &self.conic;
        let power = -0.5 * (k[(0, 0)] * dx * dx + 2.0 * k[(0, 1)] * dx * dy + k[(1, 1)] * dy * dy);
        let g = power.exp();
        (self.opacity * g, g)
    }
}

pub(crate) fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Projects Gaussian `i`. Returns `None` when it lies outside the depth
/// range, has a degenerate footprint, or touches no pixel.
pub(crate) fn project(scene: &GaussianScene, i: usize, cam: &Camera) -> Option<Projection> {
    let t = cam.world_to_camera(&scene.positions[i]);
    if !(t.z > cam.near && t.z <= cam.far) {
        return None;
    }
    let opacity = sigmoid(scene.opacity_logits[i]);
    if opacity < ALPHA_CUTOFF {
        return None;
    }
    let f = cam.focal();
    let (cx, cy) = cam.principal_point();
    let inv_z = 1.0 / t.z;
    let mean = Vector2::new(f * t.x * inv_z + cx, f * t.y * inv_z + cy);
    let jac = Matrix2x3::new(
        f * inv_z,
        0.0,
        -f * t.x * inv_z * inv_z,
        0.0,
        f * inv_z,
        -f * t.y * inv_z * inv_z,
    );

    let quat_raw = scene.rotations[i];
    let quat_norm = quat_raw.norm();
    if !(quat_norm > 0.0) {
        return None;
    }
    let quat = quat_raw / quat_norm;
    let rot = quat_to_matrix(&quat);
    let scale = scene.log_scales[i].map(f64::exp);
    let m = rot * Matrix3::from_diagonal(&scale);
    let cov = m * m.transpose();
    let cov_cam = cam.rotation * cov * cam.rotation.transpose();
    let cov2 = jac * cov_cam * jac.transpose() + Matrix2::identity() * DILATION;
    let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let b = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
    let conic = Matrix2::new(cov2[(1, 1)], -b, -b, cov2[(0, 0)]) / det;

    let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let ratio = opacity / ALPHA_CUTOFF;
    if ratio <= 1.0 {
        return None;
    }
    // Beyond this radius the Gaussian's alpha is strictly below the cutoff;
    // one extra pixel absorbs rounding.
    let radius = (2.0 * lambda_max * ratio.ln()).sqrt() + 1.0;
    let x0 = (mean.x - radius - 0.5).ceil().max(0.0);
    let y0 = (mean.y - radius - 0.5).ceil().max(0.0);
    let x1 = (mean.x + radius - 0.5).floor().min(cam.width as f64 - 1.0);
    let y1 = (mean.y + radius - 0.5).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }

    let raw = scene.sh_dc[i] * SH_C0 + Vector3::repeat(0.5);
    let color_live = [0, 1, 2].map(|c| (0.0..=1.0).contains(&raw[c]));
    Some(Projection {
        t,
        jac,
        cov_cam,
        conic,
        mean,
        rot,
        scale,
        quat,
        quat_norm,
        opacity,
        color: raw.map(|v| v.clamp(0.0, 1.0)),
        color_live,
        bbox: (x0 as usize, y0 as usize, x1 as usize, y1 as usize),
    })
}
