use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{Point, PointCloud, PointCloudError};
use crate::mesh::Label;
use crate::ply::{Element, Format, Ply, PlyError, PropertyKind, ScalarType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Encoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

impl From<PlyError> for PointCloudError {
    fn from(e: PlyError) -> Self {
        match e {
            PlyError::Io(io) => PointCloudError::Io(io),
            other => PointCloudError::Parse(other.to_string()),
        }
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, PointCloudError> {
    read_ply(BufReader::new(File::open(path)?))
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>, encoding: Encoding) -> Result<(), PointCloudError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(cloud, &mut w, encoding)?;
    w.flush()?;
    Ok(())
}

fn color_range(kind: Option<&PropertyKind>) -> f64 {
    match kind {
        Some(PropertyKind::Scalar(ScalarType::U8)) => 255.0,
        Some(PropertyKind::Scalar(ScalarType::U16)) => 65535.0,
        _ => 1.0,
    }
}

/// Reads `vertex` elements with `x y z red green blue` and an optional
/// `label` byte. Extra properties and elements are ignored.
pub fn read_ply<R: Read>(r: R) -> Result<PointCloud, PointCloudError> {
    let ply = Ply::read(BufReader::new(r))?;
    let v = ply
        .element("vertex")
        .ok_or_else(|| PointCloudError::UnsupportedProperty("no 'vertex' element".into()))?;
    let col = |name: &str| {
        v.scalar(name)
            .ok_or_else(|| PointCloudError::UnsupportedProperty(format!("missing vertex property '{name}'")))
    };
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let (r, g, b) = (col("red")?, col("green")?, col("blue")?);
    let s = [
        color_range(v.property_type("red")),
        color_range(v.property_type("green")),
        color_range(v.property_type("blue")),
    ];
    let labels = v.scalar("label");
    let mut points = Vec::with_capacity(v.count);
    for i in 0..v.count {
        let position = Vector3::new(x[i], y[i], z[i]);
        if !position.iter().all(|c| c.is_finite()) {
            return Err(PointCloudError::Parse(format!("non-finite position at vertex {i}")));
        }
        points.push(Point {
            position,
            color: Vector3::new(r[i] / s[0], g[i] / s[1], b[i] / s[2]).map(|c| c.clamp(0.0, 1.0)),
            label: labels.and_then(|l| Label::from_index(l[i] as u8)),
        });
    }
    Ok(PointCloud { points })
}

/// Positions as float32, colors as 8-bit (`round(c * 255)`), plus a `label`
/// byte when every point is labeled.
pub fn write_ply<W: Write>(cloud: &PointCloud, w: W, encoding: Encoding) -> Result<(), PointCloudError> {
    let n = cloud.len();
    let coord = |a: usize| cloud.points.iter().map(|p| p.position[a]).collect::<Vec<_>>();
    let channel = |a: usize| {
        cloud
            .points
            .iter()
            .map(|p| (p.color[a].clamp(0.0, 1.0) * 255.0).round())
            .collect::<Vec<_>>()
    };
    let mut vertex = Element::new("vertex", n)
        .with_scalar("x", ScalarType::F32, coord(0))
        .with_scalar("y", ScalarType::F32, coord(1))
        .with_scalar("z", ScalarType::F32, coord(2))
        .with_scalar("red", ScalarType::U8, channel(0))
        .with_scalar("green", ScalarType::U8, channel(1))
        .with_scalar("blue", ScalarType::U8, channel(2));
    if n > 0 && cloud.points.iter().all(|p| p.label.is_some()) {
        let labels = cloud
            .points
            .iter()
            .map(|p| p.label.map_or(0.0, |l| l as u8 as f64))
            .collect();
        vertex = vertex.with_scalar("label", ScalarType::U8, labels);
    }
    let mut ply = Ply::new(match encoding {
        Encoding::Ascii => Format::Ascii,
        Encoding::BinaryLittleEndian => Format::BinaryLittleEndian,
    });
    ply.comments.push("plantforge point cloud".into());
    ply.elements.push(vertex);
    ply.write(w)?;
    Ok(())
}
