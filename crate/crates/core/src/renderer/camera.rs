use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::RenderError;

pub const DEFAULT_NEAR: f64 = 0.01;
pub const DEFAULT_FAR: f64 = 100.0;

/// Pinhole camera. `rotation`/`translation` map world to camera space with
/// `x` right, `y` down and `z` forward. Pixels are square; pixel `(i, j)`
/// has its center at `(i + 0.5, j + 0.5)` and the principal point is the
/// image center.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fov_y_deg: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

/// Human-writable orbit description of a camera looking at the origin with
/// world `+z` up.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitView {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub radius: f64,
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl OrbitView {
    pub fn camera(&self) -> Result<Camera, RenderError> {
        Camera::orbit(
            self.azimuth_deg,
            self.elevation_deg,
            self.radius,
            self.fov_deg,
            self.width,
            self.height,
        )
    }
}

impl Camera {
    pub fn new(
        width: usize,
        height: usize,
        fov_y_deg: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            width,
            height,
            fov_y_deg,
            rotation,
            translation,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidCamera(m));
        if self.width < 8 || self.height < 8 {
            return bad(format!("image {}x{} smaller than 8x8", self.width, self.height));
        }
        if !(self.fov_y_deg > 10.0 && self.fov_y_deg < 150.0) {
            return bad(format!("fov {} outside (10, 150)", self.fov_y_deg));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("need 0 < near < far, got {} / {}", self.near, self.far));
        }
        let ortho = self.rotation * self.rotation.transpose() - Matrix3::identity();
        if ortho.amax() > 1e-6 || !self.translation.iter().all(|v| v.is_finite()) {
            return bad("pose is not a rigid transform".into());
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`. When the view direction is
    /// parallel to `up`, world `+y` is used as the up hint instead.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, RenderError> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| RenderError::InvalidCamera("eye equals target".into()))?;
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vector3::y());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(width, height, fov_y_deg, rotation, translation, DEFAULT_NEAR, DEFAULT_FAR)
    }

    /// Camera on a sphere around the origin; azimuth 0 and elevation 0 put
    /// it on the `+x` axis.
    pub fn orbit(
        azimuth_deg: f64,
        elevation_deg: f64,
        radius: f64,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, RenderError> {
        let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
        let eye = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()) * radius;
        Self::look_at(eye, Vector3::zeros(), Vector3::z(), fov_y_deg, width, height)
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.height as f64 / (2.0 * (self.fov_y_deg.to_radians() * 0.5).tan())
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 * 0.5, self.height as f64 * 0.5)
    }

    /// Camera center in world space.
    pub fn position(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}
