//! Central-difference verification of [`backward`](super::backward).

use nalgebra::{Vector3, Vector4};
use rand::Rng;

use super::{backward, render, trace_pixel, Camera, ColorImage, RenderError, SceneGradients};
use crate::gaussians::GaussianScene;
use crate::rng::stream_rng;

pub const GROUPS: [&str; 5] = ["position", "log_scale", "rotation", "opacity_logit", "sh_dc"];

/// Scalar objective `Σ ⟨upstream, rgb⟩` whose gradient `backward` returns.
pub fn objective(
    scene: &GaussianScene,
    cam: &Camera,
    bg: Vector3<f64>,
    upstream: &ColorImage,
) -> Result<f64, RenderError> {
    let img = render(scene, cam, bg)?;
    Ok(img.rgb.data.iter().zip(&upstream.data).map(|(c, g)| c.dot(g)).sum())
}

/// Visits every scalar parameter of the scene as `(group, gaussian, slot)`.
fn for_each_param(scene: &GaussianScene, mut f: impl FnMut(usize, usize, usize)) {
    for i in 0..scene.len() {
        for k in 0..3 {
            f(0, i, k);
            f(1, i, k);
            f(4, i, k);
        }
        for k in 0..4 {
            f(2, i, k);
        }
        f(3, i, 0);
    }
}

fn param_mut(scene: &mut GaussianScene, group: usize, i: usize, k: usize) -> &mut f64 {
    match group {
        0 => &mut scene.positions[i][k],
        1 => &mut scene.log_scales[i][k],
        2 => &mut scene.rotations[i][k],
        3 => &mut scene.opacity_logits[i],
        _ => &mut scene.sh_dc[i][k],
    }
}

fn grad_mut(g: &mut SceneGradients, group: usize, i: usize, k: usize) -> &mut f64 {
    match group {
        0 => &mut g.positions[i][k],
        1 => &mut g.log_scales[i][k],
        2 => &mut g.rotations[i][k],
        3 => &mut g.opacity_logits[i],
        _ => &mut g.sh_dc[i][k],
    }
}

/// Central differences with step `h` on every parameter.
pub fn numeric_gradients(
    scene: &GaussianScene,
    cam: &Camera,
    bg: Vector3<f64>,
    upstream: &ColorImage,
    h: f64,
) -> Result<SceneGradients, RenderError> {
    let mut out = SceneGradients::zeros(scene.len());
    let mut work = scene.clone();
    let mut err = None;
    for_each_param(scene, |group, i, k| {
        if err.is_some() {
            return;
        }
        let x0 = *param_mut(&mut work, group, i, k);
        let eval = |x: f64, work: &mut GaussianScene| {
            *param_mut(work, group, i, k) = x;
            objective(work, cam, bg, upstream)
        };
        match (eval(x0 + h, &mut work), eval(x0 - h, &mut work)) {
            (Ok(p), Ok(m)) => *grad_mut(&mut out, group, i, k) = (p - m) / (2.0 * h),
            (Err(e), _) | (_, Err(e)) => err = Some(e),
        }
        *param_mut(&mut work, group, i, k) = x0;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Per-group `max |analytic − numeric| / max |numeric|`. A group whose
/// numeric gradient is below `1e-9` everywhere reports the absolute error.
pub fn relative_errors(analytic: &SceneGradients, numeric: &SceneGradients) -> [f64; 5] {
    let mut diff = [0.0f64; 5];
    let mut scale = [0.0f64; 5];
    let (mut a, mut n) = (analytic.clone(), numeric.clone());
    let scene_len = analytic.len();
    for i in 0..scene_len {
        for (group, slots) in [(0, 3), (1, 3), (2, 4), (3, 1), (4, 3)] {
            for k in 0..slots {
                let av = *grad_mut(&mut a, group, i, k);
                let nv = *grad_mut(&mut n, group, i, k);
                diff[group] = diff[group].max((av - nv).abs());
                scale[group] = scale[group].max(nv.abs());
            }
        }
    }
    std::array::from_fn(|g| if scale[g] > 1e-9 { diff[g] / scale[g] } else { diff[g] })
}

/// Blend order at every pixel, as Gaussian indices.
pub fn blend_signature(scene: &GaussianScene, cam: &Camera) -> Result<Vec<Vec<usize>>, RenderError> {
    let mut sig = Vec::with_capacity(cam.pixel_count());
    for y in 0..cam.height {
        for x in 0..cam.width {
            sig.push(trace_pixel(scene, cam, x, y)?.blends.iter().map(|b| b.index).collect());
        }
    }
    Ok(sig)
}

/// True when no parameter nudge of `±h` changes which Gaussians blend at
/// which pixel or in what order, so the objective is smooth at `scene`.
pub fn locally_smooth(scene: &GaussianScene, cam: &Camera, h: f64) -> Result<bool, RenderError> {
    let base = blend_signature(scene, cam)?;
    let mut work = scene.clone();
    let mut smooth = true;
    let mut err = None;
    for_each_param(scene, |group, i, k| {
        if !smooth || err.is_some() {
            return;
        }
        let x0 = *param_mut(&mut work, group, i, k);
        for x in [x0 + h, x0 - h] {
            *param_mut(&mut work, group, i, k) = x;
            match blend_signature(&work, cam) {
                Ok(s) => smooth &= s == base,
                Err(e) => err = Some(e),
            }
        }
        *param_mut(&mut work, group, i, k) = x0;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(smooth),
    }
}

/// Small random scene in front of an 8×8 camera with a random upstream
/// gradient. Colors stay inside `(0,1)` and opacities below the alpha
/// ceiling, so the objective is smooth away from the 1/255 cutoff.
pub fn random_scene(seed: u64, count: usize) -> (GaussianScene, Camera, ColorImage) {
    let mut rng = stream_rng(seed, 0x6ad);
    let az = rng.gen_range(0.0..360.0);
    let el = rng.gen_range(-20.0..50.0);
    let cam = Camera::orbit(az, el, 2.0, 60.0, 8, 8).expect("valid camera");
    let mut scene = GaussianScene::new();
    for _ in 0..count {
        scene.positions.push(Vector3::from_fn(|_, _| rng.gen_range(-0.35..0.35)));
        scene.log_scales.push(Vector3::from_fn(|_, _| rng.gen_range(0.08f64..0.35).ln()));
        scene.rotations.push(Vector4::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        scene.opacity_logits.push(rng.gen_range(-1.0..2.0));
        scene.sh_dc.push(Vector3::from_fn(|_, _| rng.gen_range(-1.4..1.4)));
    }
    let upstream = ColorImage {
        width: 8,
        height: 8,
        data: (0..64)
            .map(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)))
            .collect(),
    };
    (scene, cam, upstream)
}

/// Outcome of checking one scene.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub seed: u64,
    pub gaussians: usize,
    pub errors: [f64; 5],
}

/// Checks `scenes` random scenes of 1 to 3 Gaussians, skipping seeds whose
/// scene is not locally smooth. Returns the results and the number of
/// skipped seeds.
pub fn run(scenes: usize, h: f64, bg: Vector3<f64>) -> Result<(Vec<CheckResult>, usize), RenderError> {
    let mut results = Vec::with_capacity(scenes);
    let mut skipped = 0;
    let mut seed = 0u64;
    while results.len() < scenes {
        let count = 1 + (seed % 3) as usize;
        let (scene, cam, upstream) = random_scene(seed, count);
        seed += 1;
        let touched = render(&scene, &cam, bg)?.alpha.data.iter().any(|&a| a > 0.05);
        if !touched || !locally_smooth(&scene, &cam, h)? {
            skipped += 1;
            continue;
        }
        let analytic = backward(&scene, &cam, bg, &upstream)?;
        let numeric = numeric_gradients(&scene, &cam, bg, &upstream, h)?;
        results.push(CheckResult {
            seed: seed - 1,
            gaussians: count,
            errors: relative_errors(&analytic, &numeric),
        });
    }
    Ok((results, skipped))
}
