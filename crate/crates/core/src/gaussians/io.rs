use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use super::{GaussianError, GaussianScene};
use crate::ply::{Element, Format, Ply, PlyError, ScalarType};

/// Property names in the 3DGS layout, in write order.
pub const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

impl From<PlyError> for GaussianError {
    fn from(e: PlyError) -> Self {
        match e {
            PlyError::Io(io) => GaussianError::Io(io),
            other => GaussianError::Parse(other.to_string()),
        }
    }
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), GaussianError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene, GaussianError> {
    read_scene(BufReader::new(File::open(path)?))
}

/// Binary little-endian float32 PLY with the standard 3DGS property names.
pub fn write_scene<W: Write>(scene: &GaussianScene, w: W) -> Result<(), GaussianError> {
    let n = scene.len();
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); PROPERTIES.len()];
    for i in 0..n {
        let row = [
            scene.positions[i].x,
            scene.positions[i].y,
            scene.positions[i].z,
            scene.sh_dc[i].x,
            scene.sh_dc[i].y,
            scene.sh_dc[i].z,
            scene.opacity_logits[i],
            scene.log_scales[i].x,
            scene.log_scales[i].y,
            scene.log_scales[i].z,
            scene.rotations[i][0],
            scene.rotations[i][1],
            scene.rotations[i][2],
            scene.rotations[i][3],
        ];
        for (c, v) in cols.iter_mut().zip(row) {
            c.push(v);
        }
    }
    let mut el = Element::new("vertex", n);
    for (name, col) in PROPERTIES.iter().zip(cols) {
        el = el.with_scalar(name, ScalarType::F32, col);
    }
    let mut ply = Ply::new(Format::BinaryLittleEndian);
    ply.elements.push(el);
    ply.write(w)?;
    Ok(())
}

/// Reads a 3DGS PLY. Extra properties (normals, higher SH bands) are
/// ignored.
pub fn read_scene<R: Read>(r: R) -> Result<GaussianScene, GaussianError> {
    let ply = Ply::read(BufReader::new(r))?;
    let v = ply
        .element("vertex")
        .ok_or_else(|| GaussianError::MissingProperty("vertex".into()))?;
    let mut cols = Vec::with_capacity(PROPERTIES.len());
    for name in PROPERTIES {
        cols.push(
            v.scalar(name)
                .ok_or_else(|| GaussianError::MissingProperty(name.to_string()))?,
        );
    }
    let mut scene = GaussianScene::new();
    for i in 0..v.count {
        let c = |k: usize| cols[k][i];
        scene.positions.push(Vector3::new(c(0), c(1), c(2)));
        scene.sh_dc.push(Vector3::new(c(3), c(4), c(5)));
        scene.opacity_logits.push(c(6));
        scene.log_scales.push(Vector3::new(c(7), c(8), c(9)));
        scene.rotations.push(Vector4::new(c(10), c(11), c(12), c(13)));
    }
    Ok(scene)
}
