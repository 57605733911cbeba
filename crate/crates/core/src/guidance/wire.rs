//! JSON bodies of the guidance HTTP protocol.
//!
//! `POST /v1/guide` carries a [`WireRequest`] and answers with a
//! [`WireResponse`]; `GET /v1/health` answers `{"status":"ok"}` when ready.
//! Arrays are row-major and base64-encoded: images as little-endian float32
//! `H×W×3`, depth as float32 `H×W`, the mask as one byte per pixel (0 or 1).
//! The service signals schema violations with HTTP 422 and model loading
//! with 503.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{GuidanceError, GuidanceMeta, GuidanceRequest, GuidanceResponse};
use crate::renderer::ColorImage;

pub const GUIDE_PATH: &str = "/v1/guide";
pub const HEALTH_PATH: &str = "/v1/health";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub image: String,
    pub depth: String,
    pub mask: String,
    pub prompt: String,
    pub timestep: f64,
    pub seed: u64,
    pub strength: f64,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMeta {
    pub model: String,
    pub lora: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub gradient: String,
    pub meta: WireMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
}

pub fn encode_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f32(s: &str) -> Result<Vec<f32>, GuidanceError> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| GuidanceError::ProtocolError(format!("base64: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(GuidanceError::ProtocolError(format!(
            "{} bytes is not a whole number of float32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn decode_u8(s: &str) -> Result<Vec<u8>, GuidanceError> {
    STANDARD
        .decode(s)
        .map_err(|e| GuidanceError::ProtocolError(format!("base64: {e}")))
}

impl WireRequest {
    pub fn from_request(r: &GuidanceRequest) -> Self {
        Self {
            image: encode_f32(&r.image.to_f32()),
            depth: encode_f32(&r.depth.data.iter().map(|&v| v as f32).collect::<Vec<_>>()),
            mask: STANDARD.encode(r.mask.data.iter().map(|&b| b as u8).collect::<Vec<_>>()),
            prompt: r.prompt.clone(),
            timestep: r.timestep,
            seed: r.seed,
            strength: r.strength,
            height: r.image.height,
            width: r.image.width,
        }
    }
}

impl WireResponse {
    pub fn from_response(r: &GuidanceResponse) -> Self {
        Self {
            gradient: encode_f32(&r.gradient.to_f32()),
            meta: WireMeta {
                model: r.meta.model.clone(),
                lora: r.meta.lora.clone(),
            },
        }
    }

    /// Decodes the gradient and checks it has the requested shape and only
    /// finite values.
    pub fn into_response(self, width: usize, height: usize) -> Result<GuidanceResponse, GuidanceError> {
        let values = decode_f32(&self.gradient)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::ProtocolError("gradient contains non-finite values".into()));
        }
        let gradient = ColorImage::from_f32(width, height, &values).ok_or_else(|| {
            GuidanceError::ProtocolError(format!(
                "gradient has {} values, expected {}x{}x3",
                values.len(),
                height,
                width
            ))
        })?;
        Ok(GuidanceResponse {
            gradient,
            meta: GuidanceMeta {
                model: self.meta.model,
                lora: self.meta.lora,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn float_encoding_is_little_endian() {
        assert_eq!(encode_f32(&[1.0]), STANDARD.encode([0x00, 0x00, 0x80, 0x3f]));
        assert_eq!(decode_f32(&encode_f32(&[0.5, -2.0])).unwrap(), vec![0.5, -2.0]);
        assert!(decode_f32(&STANDARD.encode([1, 2, 3])).is_err());
        assert!(decode_f32("not base64!").is_err());
    }

    #[test]
    fn request_fields() {
        let mut r = super::super::request_for(ColorImage::filled(3, 2, Vector3::new(0.25, 0.5, 1.0)), 0.4);
        r.mask.data[1] = false;
        let w = WireRequest::from_request(&r);
        assert_eq!((w.width, w.height), (3, 2));
        assert_eq!(decode_f32(&w.image).unwrap().len(), 18);
        assert_eq!(decode_u8(&w.mask).unwrap(), vec![1, 0, 1, 1, 1, 1]);
        let json = serde_json::to_value(&w).unwrap();
        for key in ["image", "depth", "mask", "prompt", "timestep", "seed", "strength", "height", "width"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn response_shape_checked() {
        let resp = WireResponse {
            gradient: encode_f32(&[0.0; 12]),
            meta: WireMeta {
                model: "m".into(),
                lora: None,
            },
        };
        assert!(resp.clone().into_response(2, 2).is_ok());
        assert!(matches!(resp.into_response(3, 2), Err(GuidanceError::ProtocolError(_))));
        let json = r#"{"gradient":"","meta":{"model":"x","lora":"bean"}}"#;
        let parsed: WireResponse = serde_json::from_str(json).unwrap();
        assert_eq!(parsed.meta.lora.as_deref(), Some("bean"));
    }
}
