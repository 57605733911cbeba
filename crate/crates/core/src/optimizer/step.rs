use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{LearningRates, OptimConfig, OptimError};
use crate::gaussians::GaussianScene;
use crate::guidance::{GuidanceRequest, GuidanceSource};
use crate::renderer::{backward, clean_depth_mask, render, render_depth, Camera, RenderError, SceneGradients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// `θ ← θ − γ·∇`.
    #[default]
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

/// Applies gradients to a scene, holding Adam moments when needed.
#[derive(Debug, Clone)]
pub struct Updater {
    rule: UpdateRule,
    rates: LearningRates,
    m: SceneGradients,
    v: SceneGradients,
    steps: i32,
}

fn adam(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for k in 0..p.len() {
        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
        p[k] -= lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + ADAM_EPS);
    }
}

impl Updater {
    pub fn new(rule: UpdateRule, rates: LearningRates, n: usize) -> Self {
        let size = if rule == UpdateRule::Adam { n } else { 0 };
        Self {
            rule,
            rates,
            m: SceneGradients::zeros(size),
            v: SceneGradients::zeros(size),
            steps: 0,
        }
    }

    pub fn apply(&mut self, scene: &mut GaussianScene, g: &SceneGradients) {
        let r = self.rates;
        match self.rule {
            UpdateRule::Sgd => {
                for i in 0..scene.len() {
                    scene.positions[i] -= g.positions[i] * r.position;
                    scene.log_scales[i] -= g.log_scales[i] * r.log_scale;
                    scene.rotations[i] -= g.rotations[i] * r.rotation;
                    scene.opacity_logits[i] -= g.opacity_logits[i] * r.opacity;
                    scene.sh_dc[i] -= g.sh_dc[i] * r.sh_dc;
                }
            }
            UpdateRule::Adam => {
                self.steps += 1;
                let bc1 = 1.0 - ADAM_BETA1.powi(self.steps);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.steps);
                let (m, v) = (&mut self.m, &mut self.v);
                for i in 0..scene.len() {
                    adam(
                        scene.positions[i].as_mut_slice(),
                        g.positions[i].as_slice(),
                        m.positions[i].as_mut_slice(),
                        v.positions[i].as_mut_slice(),
                        r.position,
                        bc1,
                        bc2,
                    );
                    adam(
                        scene.log_scales[i].as_mut_slice(),
                        g.log_scales[i].as_slice(),
                        m.log_scales[i].as_mut_slice(),
                        v.log_scales[i].as_mut_slice(),
                        r.log_scale,
                        bc1,
                        bc2,
                    );
                    adam(
                        scene.rotations[i].as_mut_slice(),
                        g.rotations[i].as_slice(),
                        m.rotations[i].as_mut_slice(),
                        v.rotations[i].as_mut_slice(),
                        r.rotation,
                        bc1,
                        bc2,
                    );
                    adam(
                        std::slice::from_mut(&mut scene.opacity_logits[i]),
                        &g.opacity_logits[i..=i],
                        std::slice::from_mut(&mut m.opacity_logits[i]),
                        std::slice::from_mut(&mut v.opacity_logits[i]),
                        r.opacity,
                        bc1,
                        bc2,
                    );
                    adam(
                        scene.sh_dc[i].as_mut_slice(),
                        g.sh_dc[i].as_slice(),
                        m.sh_dc[i].as_mut_slice(),
                        v.sh_dc[i].as_mut_slice(),
                        r.sh_dc,
                        bc1,
                        bc2,
                    );
                }
            }
        }
    }

    /// Drops optimizer state for removed Gaussians.
    pub fn retain(&mut self, keep: &[bool]) {
        if self.rule != UpdateRule::Adam {
            return;
        }
        for s in [&mut self.m, &mut self.v] {
            let mut out = SceneGradients::default();
            for (i, &k) in keep.iter().enumerate() {
                if k {
                    out.positions.push(s.positions[i]);
                    out.log_scales.push(s.log_scales[i]);
                    out.rotations.push(s.rotations[i]);
                    out.opacity_logits.push(s.opacity_logits[i]);
                    out.sh_dc.push(s.sh_dc[i]);
                }
            }
            *s = out;
        }
    }
}

/// L2 norm of each parameter group's gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradNorms {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity_logit: f64,
    pub sh_dc: f64,
}

impl GradNorms {
    pub fn of(g: &SceneGradients) -> Self {
        let n3 = |v: &[Vector3<f64>]| v.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
        Self {
            position: n3(&g.positions),
            log_scale: n3(&g.log_scales),
            rotation: g.rotations.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt(),
            opacity_logit: g.opacity_logits.iter().map(|x| x * x).sum::<f64>().sqrt(),
            sh_dc: n3(&g.sh_dc),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied { norms: GradNorms, mask_pixels: usize },
    /// The cleaned reference depth had no pixels; the scene is unchanged.
    SkippedEmptyMask,
}

/// Inputs that vary per step.
#[derive(Debug, Clone)]
pub struct StepInput<'a> {
    pub camera: &'a Camera,
    pub timestep: f64,
    pub seed: u64,
}

/// Renders the scene and the reference depth, queries guidance inside the
/// cleaned mask and pulls the result back to scene gradients. Returns `None`
/// when the reference depth mask is empty.
pub fn sds_gradients(
    scene: &GaussianScene,
    reference: &GaussianScene,
    guidance: &dyn GuidanceSource,
    input: &StepInput,
    config: &OptimConfig,
) -> Result<Option<(SceneGradients, usize)>, OptimError> {
    let bg = config.background_vec();
    let image = render(scene, input.camera, bg)?;
    let depth = render_depth(reference, input.camera)?;
    let cleaned = match clean_depth_mask(
        &depth,
        config.mask.alpha_threshold,
        config.mask.erode_iters,
        config.mask.dilate_iters,
    ) {
        Ok(c) => c,
        Err(RenderError::EmptyMask) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let request = GuidanceRequest {
        image: image.rgb,
        depth: cleaned.normalized,
        mask: cleaned.mask,
        prompt: config.prompt(),
        timestep: input.timestep,
        seed: input.seed,
        strength: config.guidance_strength,
    };
    let response = guidance.guide(&request).map_err(OptimError::Guidance)?;
    let mut g = response.gradient;
    if !g.same_shape(&request.image) {
        return Err(OptimError::Guidance(crate::guidance::GuidanceError::ShapeMismatch(format!(
            "gradient {}x{} for a {}x{} render",
            g.width, g.height, request.image.width, request.image.height
        ))));
    }
    for (p, &m) in g.data.iter_mut().zip(&request.mask.data) {
        if !m {
            *p = Vector3::zeros();
        }
    }
    let grads = backward(scene, input.camera, bg, &g)?;
    Ok(Some((grads, request.mask.count())))
}

/// One score-distillation update of `scene`. The reference scene supplies
/// the depth conditioning and mask and is never modified.
pub fn sds_step(
    scene: &mut GaussianScene,
    reference: &GaussianScene,
    guidance: &dyn GuidanceSource,
    input: &StepInput,
    config: &OptimConfig,
    updater: &mut Updater,
) -> Result<StepOutcome, OptimError> {
    match sds_gradients(scene, reference, guidance, input, config)? {
        None => Ok(StepOutcome::SkippedEmptyMask),
        Some((grads, mask_pixels)) => {
            updater.apply(scene, &grads);
            scene.renormalize_rotations();
            Ok(StepOutcome::Applied {
                norms: GradNorms::of(&grads),
                mask_pixels,
            })
        }
    }
}
