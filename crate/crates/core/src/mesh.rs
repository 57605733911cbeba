//! Labeled triangle meshes and the OBJ subset used for leaf templates and
//! mesh export.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Organ tag carried by mesh vertices and cloud points. The declaration
/// order doubles as the tie-break order for majority votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Stem = 0,
    Leaf = 1,
    Pot = 2,
    Soil = 3,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Stem, Label::Leaf, Label::Pot, Label::Soil];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Stem => "stem",
            Label::Leaf => "leaf",
            Label::Pot => "pot",
            Label::Soil => "soil",
        }
    }

    pub fn from_index(i: u8) -> Option<Label> {
        Self::ALL.get(i as usize).copied()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown label '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlantMesh {
    pub vertices: Vec<Vertex>,
    pub faces: Vec<[u32; 3]>,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("face {face} references vertex {index} but mesh has {len} vertices")]
    IndexOutOfRange { face: usize, index: u32, len: usize },
}

impl PlantMesh {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_vertex(&mut self, position: Vector3<f64>, color: Vector3<f64>, label: Label) -> u32 {
        self.vertices.push(Vertex {
            position,
            color,
            label,
        });
        (self.vertices.len() - 1) as u32
    }

    /// Appends `other`, shifting its face indices.
    pub fn append(&mut self, other: &PlantMesh) {
        let base = self.vertices.len() as u32;
        self.vertices.extend(other.vertices.iter().cloned());
        self.faces
            .extend(other.faces.iter().map(|f| [f[0] + base, f[1] + base, f[2] + base]));
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i as usize >= self.vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: fi,
                        index: i,
                        len: self.vertices.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn triangle(&self, f: usize) -> [&Vertex; 3] {
        let [a, b, c] = self.faces[f];
        [
            &self.vertices[a as usize],
            &self.vertices[b as usize],
            &self.vertices[c as usize],
        ]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * (b.position - a.position)
            .cross(&(c.position - a.position))
            .norm()
    }

    /// Surface area per organ label; the label of a face is that of its
    /// first vertex.
    pub fn area_by_label(&self) -> BTreeMap<Label, f64> {
        let mut out = BTreeMap::new();
        for f in 0..self.faces.len() {
            *out.entry(self.triangle(f)[0].label).or_insert(0.0) += self.face_area(f);
        }
        out
    }

    pub fn bounding_box(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = self.vertices.first()?.position;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| {
            (lo.inf(&v.position), hi.sup(&v.position))
        }))
    }

    /// Writes OBJ with the per-vertex color extension (`v x y z r g b`),
    /// grouping faces by label.
    pub fn write_obj<W: Write>(&self, mut w: W) -> Result<(), MeshError> {
        writeln!(w, "# plantforge mesh: {} vertices, {} faces", self.vertices.len(), self.faces.len())?;
        for v in &self.vertices {
            writeln!(
                w,
                "v {} {} {} {} {} {}",
                v.position.x, v.position.y, v.position.z, v.color.x, v.color.y, v.color.z
            )?;
        }
        let mut current = None;
        for f in &self.faces {
            let label = self.vertices[f[0] as usize].label;
            if current != Some(label) {
                writeln!(w, "g {label}")?;
                current = Some(label);
            }
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        Ok(())
    }

    /// Reads the OBJ subset: `v` (3 or 6 numbers), `vn` (ignored), `f` with
    /// `i`, `i/t`, `i//n` or `i/t/n` corners (polygons are fan-triangulated,
    /// negative indices are relative), and `g <label>` for organ labels.
    /// Other statements are skipped. Unlabeled vertices get `default_label`;
    /// uncolored vertices get `default_color`.
    pub fn read_obj<R: BufRead>(
        r: R,
        default_label: Label,
        default_color: Vector3<f64>,
    ) -> Result<Self, MeshError> {
        let mut mesh = PlantMesh::new();
        let mut label = default_label;
        let mut labeled = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            let err = |msg: String| MeshError::Parse { line: lineno, msg };
            let mut toks = line.split_whitespace();
            match toks.next() {
                Some("v") => {
                    let nums: Vec<f64> = toks
                        .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number '{t}'"))))
                        .collect::<Result<_, _>>()?;
                    let (p, c) = match nums.len() {
                        3 | 4 => (Vector3::new(nums[0], nums[1], nums[2]), default_color),
                        6 | 7 => (
                            Vector3::new(nums[0], nums[1], nums[2]),
                            Vector3::new(nums[3], nums[4], nums[5]),
                        ),
                        k => return Err(err(format!("vertex has {k} components"))),
                    };
                    mesh.push_vertex(p, c, default_label);
                    labeled.push(false);
                }
                Some("f") => {
                    let nv = mesh.vertices.len() as i64;
                    let idx: Vec<u32> = toks
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or("");
                            let i: i64 = head.parse().map_err(|_| err(format!("bad face index '{t}'")))?;
                            let abs = if i < 0 { nv + i } else { i - 1 };
                            if abs < 0 || abs >= nv {
                                return Err(err(format!("face index {i} out of range")));
                            }
                            Ok(abs as u32)
                        })
                        .collect::<Result<_, _>>()?;
                    if idx.len() < 3 {
                        return Err(err("face with fewer than 3 corners".into()));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                    }
                    for &i in &idx {
                        if !labeled[i as usize] {
                            mesh.vertices[i as usize].label = label;
                            labeled[i as usize] = true;
                        }
                    }
                }
                Some("g") | Some("o") => {
                    label = toks
                        .next()
                        .and_then(|s| s.parse().ok())
                        .unwrap_or(default_label);
                }
                _ => {}
            }
        }
        Ok(mesh)
    }
}
