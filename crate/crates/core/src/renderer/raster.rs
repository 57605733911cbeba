//! Tile binning, front-to-back compositing and its reverse-mode sweep.

use nalgebra::{Matrix2, Matrix3, Vector3, Vector4};

use super::project::{project, Projection, ALPHA_CUTOFF};
use super::{Camera, ColorImage, ScalarImage, SceneGradients};
use crate::gaussians::{GaussianScene, SH_C0};
use crate::par;

pub const TILE: usize = 8;
/// Per-blend alpha ceiling; keeps `1 − α` away from zero.
pub const MAX_ALPHA: f64 = 0.999;

pub(crate) struct Frame {
    pub proj: Vec<Option<Projection>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Depth-sorted Gaussian indices per tile, row-major over tiles.
    pub lists: Vec<Vec<u32>>,
    /// The fields of `proj` the pixel loops read, laid out alongside `lists`.
    pub splats: Vec<Vec<Splat>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Splat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: Vector3<f64>,
    depth: f64,
    bbox: [u32; 4],
}

impl Splat {
    fn of(p: &Projection) -> Self {
        let (x0, y0, x1, y1) = p.bbox;
        Self {
            mean: [p.mean.x, p.mean.y],
            conic: [p.conic[(0, 0)], p.conic[(0, 1)], p.conic[(1, 1)]],
            opacity: p.opacity,
            color: p.color,
            depth: p.t.z,
            bbox: [x0 as u32, y0 as u32, x1 as u32, y1 as u32],
        }
    }

    /// Same arithmetic as [`blend_alpha`]; pixels outside the bounding box
    /// are below the cutoff by construction and skip the exponential.
    #[inline]
    fn blend(&self, x: u32, y: u32, px: f64, py: f64) -> Option<(f64, f64, bool)> {
        let [x0, y0, x1, y1] = self.bbox;
        if x < x0 || x > x1 || y < y0 || y > y1 {
            return None;
        }
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        let [k00, k01, k11] = self.conic;
        let power = -0.5 * (k00 * dx * dx + 2.0 * k01 * dx * dy + k11 * dy * dy);
        let g = power.exp();
        let a = self.opacity * g;
        if a < ALPHA_CUTOFF {
            None
        } else if a > MAX_ALPHA {
            Some((MAX_ALPHA, g, true))
        } else {
            Some((a, g, false))
        }
    }
}

impl Frame {
    pub fn build(scene: &GaussianScene, cam: &Camera) -> Self {
        let proj = par::map_range(scene.len(), |i| project(scene, i, cam));
        // Depths are positive, so their bit patterns sort like the values.
        let mut order: Vec<(u64, u32)> = proj
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.as_ref().map(|p| (p.t.z.to_bits(), i as u32)))
            .collect();
        par::sort_unstable(&mut order);

        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut lists = vec![Vec::new(); tiles_x * tiles_y];
        for &(_, i) in &order {
            let (x0, y0, x1, y1) = proj[i as usize].as_ref().unwrap().bbox;
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    lists[ty * tiles_x + tx].push(i);
                }
            }
        }
        let splats = lists
            .iter()
            .map(|l| l.iter().map(|&i| Splat::of(proj[i as usize].as_ref().unwrap())).collect())
            .collect();
        Self {
            proj,
            tiles_x,
            tiles_y,
            lists,
            splats,
        }
    }

    fn tile_pixels(&self, t: usize, cam: &Camera) -> impl Iterator<Item = (usize, usize)> {
        let (tx, ty) = (t % self.tiles_x, t / self.tiles_x);
        let xs = tx * TILE..((tx + 1) * TILE).min(cam.width);
        let ys = ty * TILE..((ty + 1) * TILE).min(cam.height);
        ys.flat_map(move |y| xs.clone().map(move |x| (x, y)))
    }

    pub fn list_for_pixel(&self, x: usize, y: usize) -> &[u32] {
        &self.lists[(y / TILE) * self.tiles_x + x / TILE]
    }
}

/// One blend event at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blend {
    pub index: usize,
    /// Transmittance in front of this Gaussian.
    pub transmittance: f64,
    pub alpha: f64,
    /// `transmittance · alpha`.
    pub weight: f64,
    pub depth: f64,
}

/// Full compositing record for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTrace {
    pub blends: Vec<Blend>,
    pub final_transmittance: f64,
}

/// Evaluates alpha with the cutoff and ceiling. Returns `(alpha, falloff,
/// clamped)`.
#[inline]
fn blend_alpha(p: &Projection, px: f64, py: f64) -> Option<(f64, f64, bool)> {
    let (a, g) = p.alpha_at(px, py);
    if a < ALPHA_CUTOFF {
        return None;
    }
    if a > MAX_ALPHA {
        Some((MAX_ALPHA, g, true))
    } else {
        Some((a, g, false))
    }
}

pub(crate) fn trace(frame: &Frame, x: usize, y: usize) -> PixelTrace {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0;
    let mut blends = Vec::new();
    for &i in frame.list_for_pixel(x, y) {
        let p = frame.proj[i as usize].as_ref().unwrap();
        if let Some((a, _, _)) = blend_alpha(p, px, py) {
            blends.push(Blend {
                index: i as usize,
                transmittance: t,
                alpha: a,
                weight: t * a,
                depth: p.t.z,
            });
            t *= 1.0 - a;
        }
    }
    PixelTrace {
        blends,
        final_transmittance: t,
    }
}

pub(crate) struct Raster {
    pub rgb: ColorImage,
    pub alpha: ScalarImage,
    pub depth: ScalarImage,
}

struct TileOut {
    rgb: Vec<Vector3<f64>>,
    alpha: Vec<f64>,
    depth: Vec<f64>,
}

pub(crate) fn forward(frame: &Frame, cam: &Camera, bg: &Vector3<f64>) -> Raster {
    let n_tiles = frame.tiles_x * frame.tiles_y;
    let tiles = par::map_range(n_tiles, |t| {
        let splats = &frame.splats[t];
        let mut out = TileOut {
            rgb: Vec::with_capacity(TILE * TILE),
            alpha: Vec::with_capacity(TILE * TILE),
            depth: Vec::with_capacity(TILE * TILE),
        };
        for (x, y) in frame.tile_pixels(t, cam) {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut trans = 1.0;
            let mut c = Vector3::zeros();
            let (mut zw, mut w) = (0.0, 0.0);
            for sp in splats {
                if let Some((a, _, _)) = sp.blend(x as u32, y as u32, px, py) {
                    let wt = trans * a;
                    c += sp.color * wt;
                    zw += wt * sp.depth;
                    w += wt;
                    trans *= 1.0 - a;
                }
            }
            out.rgb.push(c + bg * trans);
            out.alpha.push(1.0 - trans);
            out.depth.push(if w > 0.0 { zw / w } else { 0.0 });
        }
        out
    });

    let (w, h) = (cam.width, cam.height);
    let mut raster = Raster {
        rgb: ColorImage::filled(w, h, Vector3::zeros()),
        alpha: ScalarImage::zeros(w, h),
        depth: ScalarImage::zeros(w, h),
    };
    for (t, out) in tiles.into_iter().enumerate() {
        for (k, (x, y)) in frame.tile_pixels(t, cam).enumerate() {
            let idx = y * w + x;
            raster.rgb.data[idx] = out.rgb[k];
            raster.alpha.data[idx] = out.alpha[k];
            raster.depth.data[idx] = out.depth[k];
        }
    }
    raster
}

/// Screen-space gradient slots accumulated per Gaussian: mean (u, v), conic
/// entries (K00, K01 counted once, K11), opacity, color.
const MEAN_U: usize = 0;
const MEAN_V: usize = 1;
const K00: usize = 2;
const K01: usize = 3;
const K11: usize = 4;
const OPACITY: usize = 5;
const COLOR: usize = 6;
type Grad2d = [f64; 9];

pub(crate) fn backward(
    frame: &Frame,
    scene: &GaussianScene,
    cam: &Camera,
    bg: &Vector3<f64>,
    upstream: &ColorImage,
) -> SceneGradients {
    let n_tiles = frame.tiles_x * frame.tiles_y;
    let per_tile: Vec<Vec<Grad2d>> = par::map_range(n_tiles, |t| {
        let splats = &frame.splats[t];
        let mut acc = vec![[0.0; 9]; splats.len()];
        if splats.is_empty() {
            return acc;
        }
        let mut hits: Vec<(usize, f64, f64, f64, bool)> = Vec::new();
        for (x, y) in frame.tile_pixels(t, cam) {
            let g_pix = upstream.data[y * cam.width + x];
            if g_pix == Vector3::zeros() {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            hits.clear();
            let mut trans = 1.0;
            for (k, sp) in splats.iter().enumerate() {
                if let Some((a, g, clamped)) = sp.blend(x as u32, y as u32, px, py) {
                    hits.push((k, a, g, trans, clamped));
                    trans *= 1.0 - a;
                }
            }
            // Gradient of everything behind the current blend, scaled by
            // that blend's transmittance.
            let mut behind = trans * g_pix.dot(bg);
            for &(k, a, g, t_i, clamped) in hits.iter().rev() {
                let p = &splats[k];
                let gc = g_pix.dot(&p.color);
                let slot = &mut acc[k];
                let w = t_i * a;
                slot[COLOR] += w * g_pix.x;
                slot[COLOR + 1] += w * g_pix.y;
                slot[COLOR + 2] += w * g_pix.z;
                let d_a = t_i * gc - behind / (1.0 - a);
                behind += w * gc;
                if clamped {
                    continue;
                }
                slot[OPACITY] += d_a * g;
                let d_pow = d_a * a;
                let dx = px - p.mean[0];
                let dy = py - p.mean[1];
                let [k00, k01, k11] = p.conic;
                slot[MEAN_U] += d_pow * (k00 * dx + k01 * dy);
                slot[MEAN_V] += d_pow * (k01 * dx + k11 * dy);
                slot[K00] += d_pow * (-0.5 * dx * dx);
                slot[K01] += d_pow * (-dx * dy);
                slot[K11] += d_pow * (-0.5 * dy * dy);
            }
        }
        acc
    });

    // Fixed tile order keeps the floating-point sums reproducible.
    let mut g2 = vec![[0.0; 9]; scene.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (k, &i) in frame.lists[t].iter().enumerate() {
            let dst = &mut g2[i as usize];
            for (d, s) in dst.iter_mut().zip(&acc[k]) {
                *d += s;
            }
        }
    }

    let rows = par::map_range(scene.len(), |i| match &frame.proj[i] {
        Some(p) => pullback(p, &g2[i], cam),
        None => GradRow::default(),
    });
    let mut out = SceneGradients::zeros(scene.len());
    for (i, r) in rows.into_iter().enumerate() {
        out.positions[i] = r.position;
        out.log_scales[i] = r.log_scale;
        out.rotations[i] = r.rotation;
        out.opacity_logits[i] = r.opacity_logit;
        out.sh_dc[i] = r.sh_dc;
    }
    out
}

#[derive(Default)]
struct GradRow {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: Vector4<f64>,
    opacity_logit: f64,
    sh_dc: Vector3<f64>,
}

/// Chain rule from screen-space gradients back to the Gaussian's stored
/// parameters.
fn pullback(p: &Projection, g: &Grad2d, cam: &Camera) -> GradRow {
    let mut row = GradRow {
        opacity_logit: g[OPACITY] * p.opacity * (1.0 - p.opacity),
        ..Default::default()
    };
    for c in 0..3 {
        if p.color_live[c] {
            row.sh_dc[c] = SH_C0 * g[COLOR + c];
        }
    }

    // conic = inverse of the dilated screen covariance
    let g_conic = Matrix2::new(g[K00], 0.5 * g[K01], 0.5 * g[K01], g[K11]);
    let g_cov2 = -(p.conic * g_conic * p.conic);
    let j = &p.jac;
    let g_cov_cam: Matrix3<f64> = j.transpose() * g_cov2 * j;
    let g_jac = 2.0 * g_cov2 * j * p.cov_cam;
    let w = &cam.rotation;
    let g_cov = w.transpose() * g_cov_cam * w;

    // cov = M Mᵀ with M = R diag(s)
    let m = p.rot * Matrix3::from_diagonal(&p.scale);
    let g_m = 2.0 * g_cov * m;
    let mut g_rot = Matrix3::zeros();
    for k in 0..3 {
        let mut gs = 0.0;
        for r in 0..3 {
            gs += g_m[(r, k)] * p.rot[(r, k)];
            g_rot[(r, k)] = g_m[(r, k)] * p.scale[k];
        }
        row.log_scale[k] = gs * p.scale[k];
    }

    let (qw, qx, qy, qz) = (p.quat[0], p.quat[1], p.quat[2], p.quat[3]);
    let r = |a: usize, b: usize| g_rot[(a, b)];
    let g_qhat = Vector4::new(
        2.0 * (-qz * r(0, 1) + qy * r(0, 2) + qz * r(1, 0) - qx * r(1, 2) - qy * r(2, 0) + qx * r(2, 1)),
        2.0 * (qy * r(0, 1) + qz * r(0, 2) + qy * r(1, 0) - 2.0 * qx * r(1, 1) - qw * r(1, 2)
            + qz * r(2, 0)
            + qw * r(2, 1)
            - 2.0 * qx * r(2, 2)),
        2.0 * (-2.0 * qy * r(0, 0) + qx * r(0, 1) + qw * r(0, 2) + qx * r(1, 0) + qz * r(1, 2)
            - qw * r(2, 0)
            + qz * r(2, 1)
            - 2.0 * qy * r(2, 2)),
        2.0 * (-2.0 * qz * r(0, 0) - qw * r(0, 1) + qx * r(0, 2) + qw * r(1, 0) - 2.0 * qz * r(1, 1)
            + qy * r(1, 2)
            + qx * r(2, 0)
            + qy * r(2, 1)),
    );
    row.rotation = (g_qhat - p.quat * p.quat.dot(&g_qhat)) / p.quat_norm;

    // camera-space mean, through both the projected center and the Jacobian
    let f = cam.focal();
    let (tx, ty, tz) = (p.t.x, p.t.y, p.t.z);
    let iz = 1.0 / tz;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (gu, gv) = (g[MEAN_U], g[MEAN_V]);
    let g_t = Vector3::new(
        f * iz * gu + g_jac[(0, 2)] * (-f * iz2),
        f * iz * gv + g_jac[(1, 2)] * (-f * iz2),
        -f * tx * iz2 * gu - f * ty * iz2 * gv
            + (g_jac[(0, 0)] + g_jac[(1, 1)]) * (-f * iz2)
            + g_jac[(0, 2)] * (2.0 * f * tx * iz3)
            + g_jac[(1, 2)] * (2.0 * f * ty * iz3),
    );
    row.position = w.transpose() * g_t;
    row
}
