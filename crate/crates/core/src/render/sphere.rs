use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::camera::{Camera, ViewSpec};

/// Bounding sphere around the box center of a point set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl BoundingSphere {
    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>> + Clone) -> Option<Self> {
        let bounds = crate::splat::Aabb::from_points(points.clone())?;
        let center = bounds.center();
        let radius = points.into_iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        Some(Self { center, radius: radius.max(1e-9) })
    }
}

/// `count` cameras with centers uniform (by area) on the sphere of `radius`
/// around `center`, each looking at `center`. Deterministic in `seed`.
pub fn sample_sphere_cameras(
    center: Vector3<f64>,
    radius: f64,
    count: usize,
    seed: u64,
    view: ViewSpec,
) -> Vec<Camera> {
    assert!(radius > 0.0, "camera sphere radius must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let z: f64 = 1.0 - 2.0 * rng.random::<f64>();
            let phi = TAU * rng.random::<f64>();
            let r = (1.0 - z * z).max(0.0).sqrt();
            let dir = Vector3::new(r * phi.cos(), r * phi.sin(), z);
            Camera::look_at(center + dir * radius, center, view).expect("radius > 0")
        })
        .collect()
}

/// `count` cameras evenly spaced in azimuth at a fixed elevation.
pub fn turntable_cameras(
    center: Vector3<f64>,
    radius: f64,
    count: usize,
    elevation_degrees: f64,
    view: ViewSpec,
) -> Vec<Camera> {
    let el = elevation_degrees.to_radians();
    (0..count)
        .map(|i| {
            let az = TAU * i as f64 / count as f64;
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            Camera::look_at(center + dir * radius, center, view).expect("radius > 0")
        })
        .collect()
}
