//! Sources of the per-pixel update direction that drives score distillation.
//!
//! A [`GuidanceSource`] receives the current render, the cleaned reference
//! depth with its mask, the prompt, a timestep and a noise seed, and returns
//! `∂L/∂x` as an image of the same shape. [`OracleGuidance`] computes this
//! in-process against a fixed target image; [`RemoteGuidance`] speaks the
//! JSON-over-HTTP protocol in [`wire`].

mod remote;
pub mod wire;

use thiserror::Error;

use crate::renderer::{ColorImage, Mask, ScalarImage};

pub use remote::{RemoteConfig, RemoteGuidance, DEFAULT_RETRIES, DEFAULT_TIMEOUT};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GuidanceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("guidance service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("guidance protocol error: {0}")]
    ProtocolError(String),
    #[error("guidance request timed out: {0}")]
    Timeout(String),
}

impl GuidanceError {
    /// Failures worth retrying or skipping a step over, as opposed to ones
    /// that will repeat on every request.
    pub fn is_transient(&self) -> bool {
        matches!(self, Self::ServiceUnavailable(_) | Self::Timeout(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    /// Rendered image in `[0,1]`.
    pub image: ColorImage,
    /// Normalized depth, near = 1, 0 outside the mask.
    pub depth: ScalarImage,
    pub mask: Mask,
    pub prompt: String,
    /// Diffusion timestep in `(0, 1]`.
    pub timestep: f64,
    pub seed: u64,
    pub strength: f64,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(self.timestep > 0.0 && self.timestep <= 1.0) {
            return Err(GuidanceError::InvalidRequest(format!(
                "timestep {} outside (0, 1]",
                self.timestep
            )));
        }
        let (w, h) = (self.image.width, self.image.height);
        if (self.depth.width, self.depth.height) != (w, h) || (self.mask.width, self.mask.height) != (w, h) {
            return Err(GuidanceError::ShapeMismatch(format!(
                "image {w}x{h}, depth {}x{}, mask {}x{}",
                self.depth.width, self.depth.height, self.mask.width, self.mask.height
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceMeta {
    pub model: String,
    pub lora: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub gradient: ColorImage,
    pub meta: GuidanceMeta,
}

pub trait GuidanceSource: Send + Sync {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;

    /// Ok when the source can serve requests now.
    fn health(&self) -> Result<(), GuidanceError>;
}

/// Guidance toward a fixed target image: `g = (1 − t)(x − target)`.
///
/// Descending this gradient is plain image matching, so optimization can be
/// checked without any diffusion model. The seed and strength are ignored.
#[derive(Debug, Clone)]
pub struct OracleGuidance {
    pub target: ColorImage,
}

impl OracleGuidance {
    pub fn new(target: ColorImage) -> Self {
        Self { target }
    }
}

pub fn oracle_guide(request: &GuidanceRequest, target: &ColorImage) -> Result<GuidanceResponse, GuidanceError> {
    request.validate()?;
    if !request.image.same_shape(target) {
        return Err(GuidanceError::ShapeMismatch(format!(
            "image {}x{}, target {}x{}",
            request.image.width, request.image.height, target.width, target.height
        )));
    }
    let w = 1.0 - request.timestep;
    let gradient = ColorImage {
        width: target.width,
        height: target.height,
        data: request
            .image
            .data
            .iter()
            .zip(&target.data)
            .map(|(x, y)| (x - y) * w)
            .collect(),
    };
    Ok(GuidanceResponse {
        gradient,
        meta: GuidanceMeta {
            model: "oracle".into(),
            lora: None,
        },
    })
}

impl GuidanceSource for OracleGuidance {
    fn guide(&self, request: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        oracle_guide(request, &self.target)
    }

    fn health(&self) -> Result<(), GuidanceError> {
        Ok(())
    }
}

#[cfg(test)]
pub(crate) fn request_for(image: ColorImage, timestep: f64) -> GuidanceRequest {
    let (w, h) = (image.width, image.height);
    GuidanceRequest {
        image,
        depth: ScalarImage::zeros(w, h),
        mask: Mask::new(w, h, true),
        prompt: "a bean plant in a pot".into(),
        timestep,
        seed: 7,
        strength: 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn fixed_point() {
        let t = ColorImage::filled(8, 8, Vector3::new(0.2, 0.4, 0.6));
        let g = oracle_guide(&request_for(t.clone(), 0.3), &t).unwrap();
        assert!(g.gradient.data.iter().all(|p| *p == Vector3::zeros()));
    }

    #[test]
    fn weighting() {
        let t = ColorImage::filled(8, 8, Vector3::new(0.2, 0.4, 0.6));
        let x = ColorImage::filled(8, 8, Vector3::new(0.3, 0.5, 0.7));
        let g = oracle_guide(&request_for(x, 0.5), &t).unwrap();
        for p in &g.gradient.data {
            assert!((p - Vector3::repeat(0.05)).amax() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let t = ColorImage::filled(8, 8, Vector3::zeros());
        let x = ColorImage::filled(8, 9, Vector3::zeros());
        assert!(matches!(
            oracle_guide(&request_for(x, 0.5), &t),
            Err(GuidanceError::ShapeMismatch(_))
        ));
        assert!(matches!(
            oracle_guide(&request_for(t.clone(), 0.0), &t),
            Err(GuidanceError::InvalidRequest(_))
        ));
        let mut r = request_for(t.clone(), 0.5);
        r.mask = Mask::new(4, 4, true);
        assert!(matches!(r.validate(), Err(GuidanceError::ShapeMismatch(_))));
    }
}
