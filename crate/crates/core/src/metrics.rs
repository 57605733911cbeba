//! Masked PSNR evaluation against ground-truth views.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::GaussianScene;
use crate::par;
use crate::renderer::{render, Camera, ColorImage, Mask, RenderError, ScalarImage};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const DEFAULT_MASK_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask is empty")]
    EmptyMask,
    #[error("{cameras} cameras but {ground_truths} ground-truth images")]
    LengthMismatch { cameras: usize, ground_truths: usize },
    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn extract_mask(alpha: &ScalarImage, threshold: f64) -> Mask {
    Mask {
        width: alpha.width,
        height: alpha.height,
        data: alpha.data.iter().map(|&a| a > threshold).collect(),
    }
}

/// Compensated running sum.
#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean squared error over the mask pixels and all three channels.
pub fn mse_masked(render: &ColorImage, ground_truth: &ColorImage, mask: &Mask) -> Result<f64, MetricsError> {
    if !render.same_shape(ground_truth) || (mask.width, mask.height) != (render.width, render.height) {
        return Err(MetricsError::ShapeMismatch(format!(
            "render {}x{}, ground truth {}x{}, mask {}x{}",
            render.width, render.height, ground_truth.width, ground_truth.height, mask.width, mask.height
        )));
    }
    let mut acc = Neumaier::default();
    let mut n = 0usize;
    for ((a, b), &m) in render.data.iter().zip(&ground_truth.data).zip(&mask.data) {
        if m {
            for c in 0..3 {
                let d = a[c] - b[c];
                acc.add(d * d);
            }
            n += 3;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(acc.value() / n as f64)
}

/// `10·log₁₀(1/MSE)` over mask pixels for images in `[0,1]`, capped at
/// [`PSNR_CAP`].
pub fn psnr_masked(render: &ColorImage, ground_truth: &ColorImage, mask: &Mask) -> Result<f64, MetricsError> {
    Ok(psnr_from_mse(mse_masked(render, ground_truth, mask)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewScore {
    pub name: String,
    /// `None` when the view's mask is empty.
    pub psnr: Option<f64>,
    pub mask_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    /// Mean over views with a nonempty mask.
    pub mean_psnr: Option<f64>,
}

impl EvalReport {
    pub fn from_views(views: Vec<ViewScore>) -> Self {
        let scored: Vec<f64> = views.iter().filter_map(|v| v.psnr).collect();
        let mean_psnr = if scored.is_empty() {
            None
        } else {
            Some(scored.iter().sum::<f64>() / scored.len() as f64)
        };
        Self { views, mean_psnr }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("view,psnr_db,mask_pixels\n");
        for v in &self.views {
            let p = v.psnr.map(|p| format!("{p:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", v.name, p, v.mask_pixels));
        }
        s
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricsError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// One evaluation view. Without an explicit mask, the mask comes from the
/// render's alpha.
#[derive(Debug, Clone)]
pub struct EvalView {
    pub name: String,
    pub camera: Camera,
    pub ground_truth: ColorImage,
    pub mask: Option<Mask>,
}

pub fn evaluate(
    scene: &GaussianScene,
    views: &[EvalView],
    threshold: f64,
    background: Vector3<f64>,
) -> Result<EvalReport, MetricsError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricsError::InvalidThreshold(threshold));
    }
    let scores = par::map_slice(views, |v| -> Result<ViewScore, MetricsError> {
        let img = render(scene, &v.camera, background)?;
        let mask = match &v.mask {
            Some(m) => m.clone(),
            None => extract_mask(&img.alpha, threshold),
        };
        let psnr = match psnr_masked(&img.rgb, &v.ground_truth, &mask) {
            Ok(p) => Some(p),
            Err(MetricsError::EmptyMask) => None,
            Err(e) => return Err(e),
        };
        Ok(ViewScore {
            name: v.name.clone(),
            psnr,
            mask_pixels: mask.count(),
        })
    });
    Ok(EvalReport::from_views(scores.into_iter().collect::<Result<_, _>>()?))
}

/// Evaluates aligned camera and ground-truth lists, naming views by index.
pub fn evaluate_views(
    scene: &GaussianScene,
    cameras: &[Camera],
    ground_truths: &[ColorImage],
    threshold: f64,
    background: Vector3<f64>,
) -> Result<EvalReport, MetricsError> {
    if cameras.len() != ground_truths.len() {
        return Err(MetricsError::LengthMismatch {
            cameras: cameras.len(),
            ground_truths: ground_truths.len(),
        });
    }
    let views: Vec<EvalView> = cameras
        .iter()
        .zip(ground_truths)
        .enumerate()
        .map(|(i, (c, g))| EvalView {
            name: format!("view_{i:03}"),
            camera: c.clone(),
            ground_truth: g.clone(),
            mask: None,
        })
        .collect();
    evaluate(scene, &views, threshold, background)
}

/// Averages over several plants, weighting every view equally and every
/// plant equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub per_view_mean: Option<f64>,
    pub per_plant_mean: Option<f64>,
    pub plants: Vec<(String, Option<f64>)>,
}

pub fn aggregate(reports: &[(String, EvalReport)]) -> Aggregate {
    let all: Vec<f64> = reports
        .iter()
        .flat_map(|(_, r)| r.views.iter().filter_map(|v| v.psnr))
        .collect();
    let plant_means: Vec<f64> = reports.iter().filter_map(|(_, r)| r.mean_psnr).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Aggregate {
        per_view_mean: mean(&all),
        per_plant_mean: mean(&plant_means),
        plants: reports.iter().map(|(n, r)| (n.clone(), r.mean_psnr)).collect(),
    }
}
