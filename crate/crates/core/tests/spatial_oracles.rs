use gsstitch_core::fixtures::interpenetrating_spheres;
use gsstitch_core::spatial::{discard_outliers, identify_boundary, select_box, KdIndex, OrientedBox, DEFAULT_K};
use gsstitch_core::{GaussianField, GaussianSplat, ShFeatures};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;

fn brute_knn(points: &[Vector3<f64>], q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(d2, i)| (i, d2.sqrt())).collect()
}

fn check_knn(points: Vec<Vector3<f64>>, queries: &[Vector3<f64>], k: usize) -> Result<(), TestCaseError> {
    let index = KdIndex::build(points.clone());
    for q in queries {
        let got: Vec<(usize, f64)> = index.knn(q, k).unwrap().iter().map(|n| (n.index, n.distance)).collect();
        prop_assert_eq!(got, brute_knn(&points, q, k));
    }
    Ok(())
}

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

/// Small integer lattice coordinates, so that exact distance ties are common.
fn lattice3() -> impl Strategy<Value = Vector3<f64>> {
    (-3i32..=3, -3i32..=3, -3i32..=3).prop_map(|(x, y, z)| Vector3::new(x as f64, y as f64, z as f64))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_matches_brute_force(points in prop::collection::vec(vec3(), 1..300), queries in prop::collection::vec(vec3(), 1..10), k in 1usize..20) {
        check_knn(points, &queries, k)?;
    }

    #[test]
    fn knn_tie_breaks_match_brute_force(points in prop::collection::vec(lattice3(), 1..200), queries in prop::collection::vec(lattice3(), 1..10), k in 1usize..30) {
        check_knn(points, &queries, k)?;
    }

    #[test]
    fn box_selection_matches_local_frame_test(
        points in prop::collection::vec(vec3(), 1..200),
        center in vec3(),
        half in (0.05..1.0f64, 0.05..1.0f64, 0.05..1.0f64),
        angles in (-3.0..3.0f64, -1.5..1.5f64, -3.0..3.0f64),
    ) {
        let field = GaussianField::new(points.iter().map(|p| GaussianSplat::isotropic(*p, 0.01, 0.9, [0.5; 3])).collect());
        let rotation = UnitQuaternion::from_euler_angles(angles.0, angles.1, angles.2);
        let half_extents = Vector3::new(half.0, half.1, half.2);
        let mask = select_box(&field, &OrientedBox { center, half_extents, rotation }).unwrap();
        let axes = rotation.to_rotation_matrix();
        for (p, m) in points.iter().zip(&mask) {
            let d = p - center;
            let inside = (0..3).all(|i| axes.matrix().column(i).dot(&d).abs() <= half_extents[i]);
            prop_assert_eq!(*m, inside);
        }
    }
}

fn mean_knn_brute(source: &[GaussianSplat], p: &Vector3<f64>, k: usize) -> (f64, ShFeatures) {
    let positions: Vec<Vector3<f64>> = source.iter().map(|s| s.position).collect();
    let nn = brute_knn(&positions, p, k);
    let mean = nn.iter().map(|(_, d)| d).sum::<f64>() / nn.len() as f64;
    let mut f = ShFeatures::zeros();
    for (i, _) in &nn {
        f += source[*i].features;
    }
    (mean, f * (1.0 / nn.len() as f64))
}

#[test]
fn boundary_matches_brute_force_on_interpenetrating_spheres() {
    let (target, source) = interpenetrating_spheres(2000, 5);
    let (tau, beta_factor) = (0.95, 0.05);
    let got = identify_boundary(&target, &source, DEFAULT_K, tau, beta_factor).unwrap();

    let all: Vec<&Vector3<f64>> = target.positions().chain(source.positions()).collect();
    let lo = all.iter().fold(Vector3::repeat(f64::INFINITY), |a, p| a.inf(p));
    let hi = all.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |a, p| a.sup(p));
    let beta = beta_factor * (hi - lo).norm();
    assert!((got.beta - beta).abs() < 1e-12);

    let mut expected = Vec::new();
    for (i, s) in target.splats.iter().enumerate() {
        if s.opacity <= tau {
            continue;
        }
        let (mean, f) = mean_knn_brute(&source.splats, &s.position, DEFAULT_K);
        if mean < beta {
            expected.push((i, mean, f));
        }
    }
    assert!(expected.len() > 20, "fixture should produce a real boundary, got {}", expected.len());
    assert!(expected.len() < target.len() / 2);
    assert_eq!(got.indices, expected.iter().map(|e| e.0).collect::<Vec<_>>());
    for (j, (_, mean, f)) in expected.iter().enumerate() {
        assert!((got.mean_neighbor_distance[j] - mean).abs() < 1e-12);
        assert!(got.target_features[j].squared_distance(f) < 1e-24);
    }
}

#[test]
fn boundary_respects_transforms() {
    let (target, source) = interpenetrating_spheres(500, 9);
    let shift = gsstitch_core::RigidTransform::new([0.6, 0.8, 0.0, 0.0], [3.0, -1.0, 2.0], 1.0).unwrap();
    let mut moved_target = target.clone();
    let mut moved_source = source.clone();
    moved_target.local_to_global = shift;
    moved_source.local_to_global = shift;
    let a = identify_boundary(&target, &source, DEFAULT_K, 0.95, 0.05).unwrap();
    let b = identify_boundary(&moved_target, &moved_source, DEFAULT_K, 0.95, 0.05).unwrap();
    assert_eq!(a.indices, b.indices);
    // moving only the target apart empties the boundary
    let mut far = target.clone();
    far.local_to_global = gsstitch_core::RigidTransform::from_translation(Vector3::new(50.0, 0.0, 0.0));
    assert!(identify_boundary(&far, &source, DEFAULT_K, 0.95, 0.05).unwrap().is_empty());
}

#[test]
fn outlier_filter_matches_brute_force_statistic() {
    let (field, _) = interpenetrating_spheres(800, 2);
    let mut field = field;
    field.splats[17].position = Vector3::new(4.0, 4.0, 4.0);
    let (k, ratio) = (16, 3.0);
    let positions: Vec<Vector3<f64>> = field.positions().copied().collect();
    let stat: Vec<f64> = positions
        .iter()
        .map(|p| brute_knn(&positions, p, k + 1).iter().skip(1).map(|(_, d)| d).sum::<f64>() / k as f64)
        .collect();
    let mean = stat.iter().sum::<f64>() / stat.len() as f64;
    let std = (stat.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / stat.len() as f64).sqrt();
    let expected: Vec<usize> = (0..stat.len()).filter(|&i| stat[i] > mean + ratio * std).collect();
    let r = discard_outliers(&field, k, ratio);
    assert!(expected.contains(&17));
    assert_eq!(r.removed, expected);
    assert!((r.threshold - (mean + ratio * std)).abs() < 1e-9);
}
