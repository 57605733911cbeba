use nalgebra::Vector3;
use plantforge::pointcloud::{
    self, load_ply, normalize_pose, recolor, remove_outliers, save_ply, voxel_downsample_with_size,
    Encoding, Point, PointCloud, RecolorMode,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};

fn point(p: Vector3<f64>) -> Point {
    Point {
        position: p,
        color: Vector3::new(0.3, 0.5, 0.2),
        label: None,
    }
}

fn sphere_with_outliers(n: usize, outliers: usize, seed: u64) -> PointCloud {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<Point> = (0..n)
        .map(|_| point(Vector3::from(UnitSphere.sample(&mut r))))
        .collect();
    for _ in 0..outliers {
        let d = Vector3::from(UnitSphere.sample(&mut r));
        pts.push(point(d * 10.0));
    }
    PointCloud::new(pts)
}

/// Evenly spread points on the unit sphere plus far outliers.
fn lattice_with_outliers(n: usize, outliers: usize) -> PointCloud {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let mut pts: Vec<Point> = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            point(Vector3::new(r * th.cos(), r * th.sin(), z))
        })
        .collect();
    for i in 0..outliers {
        let th = i as f64 * 0.7;
        pts.push(point(Vector3::new(th.cos(), th.sin(), 0.3) * 10.0));
    }
    PointCloud::new(pts)
}

/// Mean distance to the k nearest neighbors by exhaustive search.
fn brute_force_stat(pos: &[Vector3<f64>], k: usize) -> Vec<f64> {
    pos.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = pos
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| (p - q).norm())
                .collect();
            d.sort_by(f64::total_cmp);
            d[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

#[test]
fn sphere_outliers_match_brute_force() {
    let cloud = sphere_with_outliers(10_000, 50, 1);
    let (clean, removed) = remove_outliers(&cloud, 20, 2.0).unwrap();
    assert_eq!(removed, 50);
    assert!(clean.points.iter().all(|p| (p.position.norm() - 1.0).abs() < 1e-9));

    let small = sphere_with_outliers(1500, 50, 2);
    let stat = brute_force_stat(&small.positions(), 20);
    let n = stat.len() as f64;
    let mean = stat.iter().sum::<f64>() / n;
    let sd = (stat.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let oracle = stat.iter().filter(|d| **d > mean + 2.0 * sd).count();
    let (_, removed) = remove_outliers(&small, 20, 2.0).unwrap();
    assert_eq!(removed, oracle);
    assert_eq!(removed, 50);
}

#[test]
fn outlier_removal_is_nearly_idempotent() {
    let cloud = lattice_with_outliers(10_000, 50);
    let (once, removed) = remove_outliers(&cloud, 20, 2.0).unwrap();
    assert_eq!(removed, 50);
    let (_, again) = remove_outliers(&once, 20, 2.0).unwrap();
    assert!(again * 100 <= once.len(), "second pass removed {again}");
}

#[test]
fn downsample_hits_target_and_stays_near_input() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<Point> = (0..200_000)
        .map(|_| {
            let u: f64 = r.gen();
            let v: f64 = r.gen();
            point(Vector3::new(u, v, (u * 6.0).sin() * 0.2 + r.gen::<f64>() * 0.01))
        })
        .collect();
    let cloud = PointCloud::new(pts);
    let (down, edge) = voxel_downsample_with_size(&cloud, 20_000);
    assert!((18_000..=22_000).contains(&down.len()), "{} points", down.len());
    assert!(edge > 0.0);
    let tree = pointcloud::KdTree::build(&cloud.positions());
    let half_diag = edge * 3f64.sqrt() / 2.0;
    for p in &down.points {
        let (_, d) = tree.nearest(&p.position, 1, None)[0];
        assert!(d <= half_diag + 1e-12);
    }
    let (lo, hi) = cloud.bounding_box().unwrap();
    let (dlo, dhi) = down.bounding_box().unwrap();
    assert!((0..3).all(|k| dlo[k] >= lo[k] - 1e-12 && dhi[k] <= hi[k] + 1e-12));
}

#[test]
fn noise_recolor_is_uniform_over_levels() {
    let cloud = PointCloud::new((0..100_000).map(|i| point(Vector3::repeat(i as f64))).collect());
    let noisy = recolor(&cloud, RecolorMode::Noise, 9);
    for c in 0..3 {
        let mean = noisy.points.iter().map(|p| p.color[c]).sum::<f64>() / 1e5;
        assert!((0.48..=0.52).contains(&mean), "channel {c} mean {mean}");
    }
    assert!(noisy
        .points
        .iter()
        .all(|p| p.color.iter().all(|v| (v * 255.0).fract() == 0.0 && (0.0..=1.0).contains(v))));
    assert_eq!(recolor(&cloud, RecolorMode::Noise, 9), noisy);
    assert_ne!(recolor(&cloud, RecolorMode::Noise, 10), noisy);
    assert_eq!(recolor(&cloud, RecolorMode::Original, 9), cloud);
}

#[test]
fn binary_and_ascii_files_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = sphere_with_outliers(500, 0, 4);
    for (enc, name) in [(Encoding::Ascii, "a.ply"), (Encoding::BinaryLittleEndian, "b.ply")] {
        let path = dir.path().join(name);
        save_ply(&cloud, &path, enc).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert_eq!(a.position.map(|v| v as f32 as f64), b.position);
            assert_eq!((a.color * 255.0).map(f64::round), b.color * 255.0);
        }
    }
    assert!(load_ply(dir.path().join("missing.ply")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_pose_inverts(
        pts in prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 2..40),
        extent in 0.1f64..10.0,
    ) {
        let cloud = PointCloud::new(pts.iter().map(|p| point(Vector3::from(*p))).collect());
        prop_assume!(cloud.bounding_box().map(|(lo, hi)| (hi - lo).max() > 1e-3).unwrap());
        let (norm, t) = normalize_pose(&cloud, extent).unwrap();
        let (lo, hi) = norm.bounding_box().unwrap();
        prop_assert!(((hi - lo).max() - extent).abs() < 1e-9 * extent.max(1.0));
        prop_assert!((lo + hi).norm() < 1e-9);
        let inv = t.inverse();
        for (a, b) in cloud.points.iter().zip(&norm.points) {
            prop_assert!((inv.apply(&b.position) - a.position).norm() < 1e-6);
        }
    }

    #[test]
    fn cleaning_preserves_ranges(seed in any::<u64>(), n in 60usize..400) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud::new((0..n).map(|_| Point {
            position: Vector3::from_fn(|_, _| r.gen_range(-2.0..2.0)),
            color: Vector3::from_fn(|_, _| r.gen::<f64>()),
            label: None,
        }).collect());
        let (clean, removed) = remove_outliers(&cloud, 20, 2.0).unwrap();
        prop_assert!(removed <= n - 20);
        let (down, _) = voxel_downsample_with_size(&clean, n / 3);
        for p in &down.points {
            prop_assert!(p.position.iter().all(|v| v.is_finite()));
            prop_assert!(p.color.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let (lo, hi) = clean.bounding_box().unwrap();
        let (dlo, dhi) = down.bounding_box().unwrap();
        prop_assert!((0..3).all(|k| dlo[k] >= lo[k] - 1e-12 && dhi[k] <= hi[k] + 1e-12));
    }
}
