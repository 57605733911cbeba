use nalgebra::Vector3;
use rand::Rng;

use super::LSystemError;
use crate::mesh::PlantMesh;
use crate::pointcloud::{Point, PointCloud};
use crate::{par, rng};

const CHUNK: usize = 4096;

/// Area-weighted uniform surface sampling. Each chunk of 4096 samples draws
/// from its own ChaCha stream, so output is independent of thread count.
pub fn sample_pointcloud(
    mesh: &PlantMesh,
    target_points: usize,
    seed: u64,
) -> Result<PointCloud, LSystemError> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if mesh.faces.is_empty() || !(total > 0.0) {
        return Err(LSystemError::DegenerateMesh);
    }

    let mut points = vec![
        Point {
            position: Vector3::zeros(),
            color: Vector3::zeros(),
            label: None,
        };
        target_points
    ];
    par::for_each_chunk_mut(&mut points, CHUNK, |chunk_index, out| {
        let mut r = rng::stream_rng(seed, chunk_index as u64);
        for p in out.iter_mut() {
            let x = r.gen::<f64>() * total;
            let f = cumulative
                .partition_point(|&c| c <= x)
                .min(mesh.faces.len() - 1);
            let [a, b, c] = mesh.triangle(f);
            let s = r.gen::<f64>().sqrt();
            let t = r.gen::<f64>();
            let (w0, w1, w2) = (1.0 - s, s * (1.0 - t), s * t);
            p.position = a.position * w0 + b.position * w1 + c.position * w2;
            p.color = (a.color * w0 + b.color * w1 + c.color * w2)
                .map(|v| v.clamp(0.0, 1.0));
            p.label = Some(a.label);
        }
    });
    Ok(PointCloud { points })
}
