//! Turtle interpretation.
//!
//! The turtle starts at the origin with heading `H = +z`, left `L = +x` and
//! up `U = H × L = +y`. Rotations follow the right-hand rule:
//!
//! | symbol | axis | angle |
//! |--------|------|-------|
//! | `+` / `-` | U | +δ / −δ |
//! | `&` / `^` | L | +δ / −δ |
//! | `\` / `/` | H | +δ / −δ |
//!
//! `δ` is the symbol's first parameter in degrees, or the default angle.
//! `F(l)` draws a stem segment of length `l` (default step), `f(l)` moves
//! without drawing, `[`/`]` push/pop the full state (the pushed branch's
//! radius is multiplied by the decay), `!(r)` sets the radius and bare `!`
//! decays it, `L(s)` places the leaf template scaled by `s`. Other letters
//! are inert.

use std::collections::BTreeMap;

use nalgebra::{Rotation3, Unit, Vector3};

use super::{LSystemError, SymbolString};
use crate::mesh::{Label, PlantMesh};
use crate::rng;

pub const DEFAULT_LEAF: &str = "default";

const STEM_SIDES: usize = 8;
const POT_SIDES: usize = 24;

/// Base organ colors, jittered per vertex by up to [`JITTER`].
pub mod colors {
    use nalgebra::Vector3;

    pub const LEAF: [f64; 3] = [0.20, 0.45, 0.15];
    pub const STEM: [f64; 3] = [0.35, 0.45, 0.20];
    /// Stem color at the plant base; stems blend to [`STEM`] with height.
    pub const STEM_BASE: [f64; 3] = [0.40, 0.32, 0.18];
    pub const SOIL: [f64; 3] = [0.25, 0.16, 0.10];
    pub const POT: [f64; 3] = [0.55, 0.30, 0.20];
    pub const JITTER: f64 = 0.03;

    pub fn v(c: [f64; 3]) -> Vector3<f64> {
        Vector3::new(c[0], c[1], c[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurtleParams {
    pub step: f64,
    pub angle_deg: f64,
    pub base_radius: f64,
    /// Radius multiplier applied on entering a branch, in (0, 1].
    pub radius_decay: f64,
    pub leaf_template: String,
    pub leaf_scale: f64,
    pub pot: bool,
    pub pot_radius: f64,
    pub pot_height: f64,
    pub color_seed: u64,
}

impl Default for TurtleParams {
    fn default() -> Self {
        Self {
            step: 0.1,
            angle_deg: 25.0,
            base_radius: 0.012,
            radius_decay: 0.75,
            leaf_template: DEFAULT_LEAF.to_string(),
            leaf_scale: 0.25,
            pot: true,
            pot_radius: 0.22,
            pot_height: 0.2,
            color_seed: 0,
        }
    }
}

impl TurtleParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.step > 0.0) {
            return Err(format!("step must be > 0, got {}", self.step));
        }
        if !(self.radius_decay > 0.0 && self.radius_decay <= 1.0) {
            return Err(format!("radius decay must be in (0,1], got {}", self.radius_decay));
        }
        if !(self.base_radius > 0.0) {
            return Err("base radius must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub position: Vector3<f64>,
    pub heading: Vector3<f64>,
    pub left: Vector3<f64>,
    pub up: Vector3<f64>,
}

impl Frame {
    fn origin() -> Self {
        Self {
            position: Vector3::zeros(),
            heading: Vector3::z(),
            left: Vector3::x(),
            up: Vector3::y(),
        }
    }

    fn rotate(&mut self, axis: Vector3<f64>, degrees: f64) {
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(axis), degrees.to_radians());
        self.heading = r * self.heading;
        self.left = r * self.left;
        self.up = r * self.up;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub heading: Vector3<f64>,
    pub left: Vector3<f64>,
    pub up: Vector3<f64>,
    pub radius: f64,
    /// Bracket depth at which the segment was drawn.
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeafPlacement {
    pub frame: Frame,
    pub scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TurtleTrace {
    pub segments: Vec<Segment>,
    pub leaves: Vec<LeafPlacement>,
}

#[derive(Clone)]
struct State {
    frame: Frame,
    radius: f64,
    depth: usize,
}

/// Runs the turtle and records drawn segments and leaf placements.
pub fn trace(symbols: &SymbolString, params: &TurtleParams) -> Result<TurtleTrace, LSystemError> {
    let mut state = State {
        frame: Frame::origin(),
        radius: params.base_radius,
        depth: 0,
    };
    let mut stack: Vec<State> = Vec::new();
    let mut out = TurtleTrace::default();

    for (index, sym) in symbols.iter().enumerate() {
        let first = sym.params.first().copied();
        let angle = first.unwrap_or(params.angle_deg);
        match sym.ch {
            'F' | 'f' => {
                let len = first.unwrap_or(params.step);
                let start = state.frame.position;
                let end = start + state.frame.heading * len;
                if sym.ch == 'F' {
                    out.segments.push(Segment {
                        start,
                        end,
                        heading: state.frame.heading,
                        left: state.frame.left,
                        up: state.frame.up,
                        radius: state.radius,
                        depth: state.depth,
                    });
                }
                state.frame.position = end;
            }
            '+' => state.frame.rotate(state.frame.up, angle),
            '-' => state.frame.rotate(state.frame.up, -angle),
            '&' => state.frame.rotate(state.frame.left, angle),
            '^' => state.frame.rotate(state.frame.left, -angle),
            '\\' => state.frame.rotate(state.frame.heading, angle),
            '/' => state.frame.rotate(state.frame.heading, -angle),
            '[' => {
                stack.push(state.clone());
                state.radius *= params.radius_decay;
                state.depth += 1;
            }
            ']' => {
                state = stack.pop().ok_or(LSystemError::StackUnderflow { index })?;
            }
            '!' => match first {
                Some(r) => state.radius = r,
                None => state.radius *= params.radius_decay,
            },
            'L' => out.leaves.push(LeafPlacement {
                frame: state.frame,
                scale: first.unwrap_or(1.0) * params.leaf_scale,
            }),
            _ => {}
        }
    }
    Ok(out)
}

/// Builds the plant mesh: stems as 8-sided tubes, leaf template instances,
/// and optionally a pot with a soil disc below the origin.
pub fn interpret(
    symbols: &SymbolString,
    params: &TurtleParams,
    leaf_library: &BTreeMap<String, PlantMesh>,
) -> Result<PlantMesh, LSystemError> {
    let tr = trace(symbols, params)?;
    let template = if tr.leaves.is_empty() {
        None
    } else {
        Some(
            leaf_library
                .get(&params.leaf_template)
                .ok_or_else(|| LSystemError::MissingLeaf(params.leaf_template.clone()))?,
        )
    };

    let mut mesh = PlantMesh::new();
    let top = tr
        .segments
        .iter()
        .map(|s| s.start.z.max(s.end.z))
        .fold(0.0f64, f64::max)
        .max(1e-9);

    for seg in &tr.segments {
        let base = mesh.vertices.len() as u32;
        for center in [seg.start, seg.end] {
            let h = (center.z / top).clamp(0.0, 1.0);
            let color = colors::v(colors::STEM_BASE) * (1.0 - h) + colors::v(colors::STEM) * h;
            for k in 0..STEM_SIDES {
                let theta = std::f64::consts::TAU * k as f64 / STEM_SIDES as f64;
                let offset = (seg.left * theta.cos() + seg.up * theta.sin()) * seg.radius;
                mesh.push_vertex(center + offset, color, Label::Stem);
            }
        }
        let n = STEM_SIDES as u32;
        for k in 0..n {
            let k1 = (k + 1) % n;
            mesh.faces.push([base + k, base + k1, base + n + k1]);
            mesh.faces.push([base + k, base + n + k1, base + n + k]);
        }
    }

    if let Some(tpl) = template {
        for leaf in &tr.leaves {
            let base = mesh.vertices.len() as u32;
            let f = &leaf.frame;
            for v in &tpl.vertices {
                let p = f.position
                    + (f.left * v.position.x + f.heading * v.position.y + f.up * v.position.z)
                        * leaf.scale;
                mesh.push_vertex(p, colors::v(colors::LEAF), Label::Leaf);
            }
            mesh.faces
                .extend(tpl.faces.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
        }
    }

    if params.pot {
        append_pot(&mut mesh, params);
    }

    for (i, v) in mesh.vertices.iter_mut().enumerate() {
        for c in 0..3 {
            let j = (rng::uniform3(params.color_seed, i as u64, c as u64) * 2.0 - 1.0) * colors::JITTER;
            v.color[c] = (v.color[c] + j).clamp(0.0, 1.0);
        }
    }
    Ok(mesh)
}

/// Open-topped frustum pot from `z = -pot_height` to `z = 0` and a soil disc
/// just under the rim.
fn append_pot(mesh: &mut PlantMesh, params: &TurtleParams) {
    let r_top = params.pot_radius;
    let r_bot = params.pot_radius * 0.8;
    let h = params.pot_height;
    let n = POT_SIDES as u32;
    let ring = |r: f64, z: f64, k: usize| {
        let t = std::f64::consts::TAU * k as f64 / POT_SIDES as f64;
        Vector3::new(r * t.cos(), r * t.sin(), z)
    };

    let pot = colors::v(colors::POT);
    let base = mesh.vertices.len() as u32;
    for k in 0..POT_SIDES {
        mesh.push_vertex(ring(r_bot, -h, k), pot, Label::Pot);
    }
    for k in 0..POT_SIDES {
        mesh.push_vertex(ring(r_top, 0.0, k), pot, Label::Pot);
    }
    let bottom_center = mesh.push_vertex(Vector3::new(0.0, 0.0, -h), pot, Label::Pot);
    for k in 0..n {
        let k1 = (k + 1) % n;
        mesh.faces.push([base + k, base + k1, base + n + k1]);
        mesh.faces.push([base + k, base + n + k1, base + n + k]);
        mesh.faces.push([bottom_center, base + k1, base + k]);
    }

    let soil = colors::v(colors::SOIL);
    let z = -0.02 * h;
    let sbase = mesh.vertices.len() as u32;
    let center = mesh.push_vertex(Vector3::new(0.0, 0.0, z), soil, Label::Soil);
    for k in 0..POT_SIDES {
        mesh.push_vertex(ring(r_top * 0.97, z, k), soil, Label::Soil);
    }
    for k in 0..n {
        let k1 = (k + 1) % n;
        mesh.faces.push([center, sbase + 1 + k, sbase + 1 + k1]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn no_pot() -> TurtleParams {
        TurtleParams {
            step: 1.0,
            pot: false,
            ..Default::default()
        }
    }

    fn lib() -> BTreeMap<String, PlantMesh> {
        crate::lsystem::corpus::leaf_library()
    }

    #[test]
    fn single_segment_is_unit_cylinder() {
        let s = SymbolString::parse("F").unwrap();
        let m = interpret(&s, &no_pot(), &lib()).unwrap();
        assert_eq!(m.vertices.len(), 16);
        assert_eq!(m.faces.len(), 16);
        assert!(m.vertices.iter().all(|v| v.label == Label::Stem));
        let (lo, hi) = m.bounding_box().unwrap();
        assert_relative_eq!(lo.z, 0.0, epsilon = 1e-12);
        assert_relative_eq!(hi.z, 1.0, epsilon = 1e-12);
        for v in &m.vertices {
            let r = (v.position.x.powi(2) + v.position.y.powi(2)).sqrt();
            assert_relative_eq!(r, no_pot().base_radius, epsilon = 1e-12);
        }
        m.validate().unwrap();
    }

    #[test]
    fn branch_frames_are_hand_computed() {
        let s = SymbolString::parse("F[+F][-F]").unwrap();
        let t = trace(&s, &no_pot()).unwrap();
        assert_eq!(t.segments.len(), 3);
        let (sn, cs) = 25f64.to_radians().sin_cos();
        let top = Vector3::new(0.0, 0.0, 1.0);
        assert_relative_eq!(t.segments[1].start, top, epsilon = 1e-12);
        assert_relative_eq!(t.segments[1].end, top + Vector3::new(sn, 0.0, cs), epsilon = 1e-12);
        assert_relative_eq!(t.segments[2].end, top + Vector3::new(-sn, 0.0, cs), epsilon = 1e-12);
        assert_relative_eq!(t.segments[1].left, Vector3::new(cs, 0.0, -sn), epsilon = 1e-12);
        assert_eq!(t.segments[1].depth, 1);
        assert_relative_eq!(t.segments[1].radius, 0.012 * 0.75, epsilon = 1e-15);
    }

    #[test]
    fn leaf_is_placed_at_tip_frame() {
        let mut quad = PlantMesh::new();
        for (x, y) in [(-0.5, 0.0), (0.5, 0.0), (0.5, 1.0), (-0.5, 1.0)] {
            quad.push_vertex(Vector3::new(x, y, 0.0), Vector3::zeros(), Label::Leaf);
        }
        quad.faces = vec![[0, 1, 2], [0, 2, 3]];
        let mut lib = BTreeMap::new();
        lib.insert("quad".to_string(), quad);
        let params = TurtleParams {
            leaf_template: "quad".into(),
            leaf_scale: 1.0,
            ..no_pot()
        };
        let m = interpret(&SymbolString::parse("F&(90)L").unwrap(), &params, &lib).unwrap();
        let leaves: Vec<_> = m.vertices.iter().filter(|v| v.label == Label::Leaf).collect();
        assert_eq!(leaves.len(), 4);
        // after pitching 90 degrees about L=+x, heading z -> -y
        let want = [
            Vector3::new(-0.5, 0.0, 1.0),
            Vector3::new(0.5, 0.0, 1.0),
            Vector3::new(0.5, -1.0, 1.0),
            Vector3::new(-0.5, -1.0, 1.0),
        ];
        for (v, w) in leaves.iter().zip(want) {
            assert_relative_eq!(v.position, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            trace(&SymbolString::parse("F]").unwrap(), &no_pot()).unwrap_err(),
            LSystemError::StackUnderflow { index: 1 }
        );
        assert_eq!(
            interpret(&SymbolString::parse("FL").unwrap(), &no_pot(), &BTreeMap::new()).unwrap_err(),
            LSystemError::MissingLeaf(DEFAULT_LEAF.into())
        );
    }

    #[test]
    fn pot_and_soil_below_origin() {
        let m = interpret(&SymbolString::parse("F").unwrap(), &TurtleParams::default(), &lib()).unwrap();
        let (lo, hi) = m.bounding_box().unwrap();
        assert!(lo.z < 0.0 && hi.z > 0.0 && lo.x < 0.0 && hi.x > 0.0);
        for v in &m.vertices {
            if matches!(v.label, Label::Pot | Label::Soil) {
                assert!(v.position.z <= 0.0);
            }
        }
        m.validate().unwrap();
    }

    #[test]
    fn colors_jittered_within_bounds_and_pure() {
        let s = SymbolString::parse("F[+FL][-FL]").unwrap();
        let a = interpret(&s, &TurtleParams::default(), &lib()).unwrap();
        let b = interpret(&s, &TurtleParams::default(), &lib()).unwrap();
        assert_eq!(a, b);
        for v in a.vertices.iter().filter(|v| v.label == Label::Leaf) {
            for c in 0..3 {
                assert!((v.color[c] - colors::LEAF[c]).abs() <= colors::JITTER + 1e-12);
            }
        }
    }
}
