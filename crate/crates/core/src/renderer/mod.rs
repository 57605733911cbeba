//! Differentiable tile rasterizer for Gaussian scenes.
//!
//! Each Gaussian is projected with the local affine (EWA) approximation of
//! the perspective map, dilated by 0.3 px, sorted front-to-back by camera
//! depth with the scene index as tie-break, and alpha-composited per pixel
//! over a fixed background. Pixels are processed in 16×16 tiles; a
//! Gaussian's tile footprint is derived from the radius at which its alpha
//! drops below 1/255, so tiling never changes the result.
//!
//! [`backward`] returns the exact gradient of `⟨upstream, rgb⟩` with respect
//! to every stored parameter. Per-tile partial sums are reduced in tile
//! order, so results are bit-reproducible regardless of thread count.

mod camera;
pub mod gradcheck;
mod image;
mod project;
mod raster;

use nalgebra::{Vector3, Vector4};
use thiserror::Error;

pub use self::camera::{Camera, OrbitView, DEFAULT_FAR, DEFAULT_NEAR};
pub use self::image::{ColorImage, Mask, ScalarImage};
pub use self::project::{ALPHA_CUTOFF, DILATION};
pub use self::raster::{Blend, PixelTrace, MAX_ALPHA, TILE};

use crate::gaussians::GaussianScene;
use raster::Frame;

pub const DEFAULT_BACKGROUND: Vector3<f64> = Vector3::new(1.0, 1.0, 1.0);
pub const DEFAULT_ALPHA_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ERODE_ITERS: usize = 1;
pub const DEFAULT_DILATE_ITERS: usize = 1;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("scene arrays have inconsistent lengths")]
    InconsistentScene,
    #[error("gradient image is {got_w}x{got_h}, camera is {want_w}x{want_h}")]
    ShapeMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("upstream gradient contains non-finite values")]
    NonFinite,
    #[error("depth mask is empty after cleanup")]
    EmptyMask,
    #[error("image: {0}")]
    Image(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub rgb: ColorImage,
    /// Accumulated opacity, `1 − final transmittance`.
    pub alpha: ScalarImage,
    /// Weight-averaged camera-space depth of the blended Gaussians, 0 where
    /// nothing was blended.
    pub depth: ScalarImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    /// Camera-space depth, 0 where accumulated alpha is below 0.5.
    pub depth: ScalarImage,
    pub alpha: ScalarImage,
}

/// Output of [`clean_depth_mask`].
#[derive(Debug, Clone, PartialEq)]
pub struct CleanedDepth {
    /// Metric depth inside the mask, 0 elsewhere.
    pub depth: ScalarImage,
    /// Depth remapped to `[0,1]` inside the mask with the nearest pixel at 1
    /// and the farthest at 0; 0 outside. A constant-depth mask maps to 1.
    pub normalized: ScalarImage,
    pub mask: Mask,
}

/// Gradients with the same layout as [`GaussianScene`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneGradients {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<Vector4<f64>>,
    pub opacity_logits: Vec<f64>,
    pub sh_dc: Vec<Vector3<f64>>,
}

impl SceneGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![Vector3::zeros(); n],
            log_scales: vec![Vector3::zeros(); n],
            rotations: vec![Vector4::zeros(); n],
            opacity_logits: vec![0.0; n],
            sh_dc: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| x.is_finite())
            && self.sh_dc.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// True when every entry of row `i` is exactly zero.
    pub fn row_is_zero(&self, i: usize) -> bool {
        self.positions[i] == Vector3::zeros()
            && self.log_scales[i] == Vector3::zeros()
            && self.rotations[i] == Vector4::zeros()
            && self.opacity_logits[i] == 0.0
            && self.sh_dc[i] == Vector3::zeros()
    }

    pub fn max_abs(&self) -> f64 {
        let m3 = |v: &[Vector3<f64>]| v.iter().map(|x| x.amax()).fold(0.0, f64::max);
        m3(&self.positions)
            .max(m3(&self.log_scales))
            .max(m3(&self.sh_dc))
            .max(self.rotations.iter().map(|x| x.amax()).fold(0.0, f64::max))
            .max(self.opacity_logits.iter().map(|x| x.abs()).fold(0.0, f64::max))
    }
}

fn check(scene: &GaussianScene, cam: &Camera) -> Result<(), RenderError> {
    cam.validate()?;
    if !scene.is_consistent() {
        return Err(RenderError::InconsistentScene);
    }
    Ok(())
}

pub fn render(scene: &GaussianScene, cam: &Camera, background: Vector3<f64>) -> Result<RenderedImage, RenderError> {
    check(scene, cam)?;
    let frame = Frame::build(scene, cam);
    let r = raster::forward(&frame, cam, &background);
    Ok(RenderedImage {
        rgb: r.rgb,
        alpha: r.alpha,
        depth: r.depth,
    })
}

/// Gradient of `Σ_pixels ⟨upstream, rgb⟩` with respect to the scene.
pub fn backward(
    scene: &GaussianScene,
    cam: &Camera,
    background: Vector3<f64>,
    upstream: &ColorImage,
) -> Result<SceneGradients, RenderError> {
    check(scene, cam)?;
    if upstream.width != cam.width || upstream.height != cam.height {
        return Err(RenderError::ShapeMismatch {
            got_w: upstream.width,
            got_h: upstream.height,
            want_w: cam.width,
            want_h: cam.height,
        });
    }
    if !upstream.data.iter().all(|p| p.iter().all(|v| v.is_finite())) {
        return Err(RenderError::NonFinite);
    }
    let frame = Frame::build(scene, cam);
    Ok(raster::backward(&frame, scene, cam, &background, upstream))
}

/// Per-blend record for pixel `(x, y)`, in compositing order.
pub fn trace_pixel(scene: &GaussianScene, cam: &Camera, x: usize, y: usize) -> Result<PixelTrace, RenderError> {
    check(scene, cam)?;
    if x >= cam.width || y >= cam.height {
        return Err(RenderError::InvalidCamera(format!("pixel ({x}, {y}) outside image")));
    }
    Ok(raster::trace(&Frame::build(scene, cam), x, y))
}

/// Expected depth of `reference` using the compositing weights of [`render`].
pub fn render_depth(reference: &GaussianScene, cam: &Camera) -> Result<DepthMap, RenderError> {
    let r = render(reference, cam, Vector3::zeros())?;
    let mut depth = r.depth;
    for (d, &a) in depth.data.iter_mut().zip(&r.alpha.data) {
        if a < 0.5 {
            *d = 0.0;
        }
    }
    Ok(DepthMap { depth, alpha: r.alpha })
}

/// Thresholds, erodes, dilates and normalizes a depth map. Morphology uses
/// the 3×3 square kernel.
pub fn clean_depth_mask(
    depth: &DepthMap,
    alpha_threshold: f64,
    erode_iters: usize,
    dilate_iters: usize,
) -> Result<CleanedDepth, RenderError> {
    let (w, h) = (depth.depth.width, depth.depth.height);
    let mut mask = Mask {
        width: w,
        height: h,
        data: depth
            .depth
            .data
            .iter()
            .zip(&depth.alpha.data)
            .map(|(&d, &a)| d > 0.0 && a >= alpha_threshold)
            .collect(),
    };
    for _ in 0..erode_iters {
        mask = mask.erode();
    }
    for _ in 0..dilate_iters {
        mask = mask.dilate();
    }
    // Dilation can reach pixels that never had depth.
    for (m, &d) in mask.data.iter_mut().zip(&depth.depth.data) {
        *m &= d > 0.0;
    }
    if !mask.any() {
        return Err(RenderError::EmptyMask);
    }

    let mut metric = ScalarImage::zeros(w, h);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            let d = depth.depth.data[i];
            metric.data[i] = d;
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    let mut normalized = ScalarImage::zeros(w, h);
    for (i, &m) in mask.data.iter().enumerate() {
        if m {
            normalized.data[i] = if hi > lo {
                (hi - metric.data[i]) / (hi - lo)
            } else {
                1.0
            };
        }
    }
    Ok(CleanedDepth {
        depth: metric,
        normalized,
        mask,
    })
}
