//! Synthetic scenes shared by tests, benchmarks and demos.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::optimize::metrics::{content_deviation, palette_distance, seam_discontinuity, ContentStats};
use crate::optimize::{loss_feature, StitchConfig, StitchError, StitchOutcome, Stitcher};
use crate::render::{sample_sphere_cameras, turntable_cameras, BoundingSphere, ViewSpec};
use crate::spatial::{identify_boundary, BoundarySet};
use crate::splat::{GaussianField, GaussianSplat, RigidTransform};

/// Jittered cubic lattice of `n^3` isotropic splats filling the cube of
/// side `size` centered at the origin.
pub fn lattice_cube(
    n: usize,
    size: f64,
    opacity: f64,
    seed: u64,
    color: impl Fn(&Vector3<f64>) -> [f64; 3],
) -> GaussianField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = size / (n - 1) as f64;
    let mut splats = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let base = Vector3::new(i as f64, j as f64, k as f64) * spacing - Vector3::repeat(size / 2.0);
                let jitter = Vector3::new(
                    rng.random_range(-0.15..0.15),
                    rng.random_range(-0.15..0.15),
                    rng.random_range(-0.15..0.15),
                ) * spacing;
                let p = base + jitter;
                splats.push(GaussianSplat::isotropic(p, 0.6 * spacing, opacity, color(&p)));
            }
        }
    }
    GaussianField::new(splats)
}

/// Red source cube and textured blue target cube.
#[derive(Debug, Clone)]
pub struct TwoCubeFixture {
    pub source: GaussianField,
    /// In its own local frame, placed by `local_to_global`.
    pub target: GaussianField,
}

/// Parameters of [`two_cube`].
#[derive(Debug, Clone, Copy)]
pub struct TwoCubeSpec {
    pub per_edge: usize,
    pub size: f64,
    /// Overlap along x as a fraction of the cube size.
    pub overlap: f64,
    pub texture_amplitude: f64,
    /// Texture period in lattice spacings.
    pub texture_period: f64,
    pub seed: u64,
}

impl Default for TwoCubeSpec {
    fn default() -> Self {
        Self { per_edge: 13, size: 1.0, overlap: 0.1, texture_amplitude: 0.15, texture_period: 3.0, seed: 7 }
    }
}

pub const SOURCE_RED: [f64; 3] = [0.85, 0.12, 0.10];
pub const TARGET_BLUE: [f64; 3] = [0.15, 0.25, 0.80];

pub fn two_cube(spec: &TwoCubeSpec) -> TwoCubeFixture {
    let source = lattice_cube(spec.per_edge, spec.size, 0.99, spec.seed, |_| SOURCE_RED)
        .with_role(crate::splat::FieldRole::Source);
    let spacing = spec.size / (spec.per_edge - 1) as f64;
    let wave = std::f64::consts::TAU / (spec.texture_period * spacing);
    let amp = spec.texture_amplitude;
    let mut target = lattice_cube(spec.per_edge, spec.size, 0.99, spec.seed + 1, |p| {
        let lum = amp * (wave * p.x).cos() * (wave * p.y).cos() * (wave * p.z).cos();
        TARGET_BLUE.map(|c| (c + lum).clamp(0.0, 1.0))
    })
    .with_role(crate::splat::FieldRole::Target);
    target.local_to_global = RigidTransform::from_translation(Vector3::new(spec.size * (1.0 - spec.overlap), 0.0, 0.0));
    TwoCubeFixture { source, target }
}

/// Two interpenetrating spheres of `n` random splats each, with random
/// opacities straddling the boundary threshold.
pub fn interpenetrating_spheres(n: usize, seed: u64) -> (GaussianField, GaussianField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = |center: Vector3<f64>, rgb: [f64; 3], rng: &mut ChaCha8Rng| -> GaussianField {
        let splats = (0..n)
            .map(|_| {
                let p = loop {
                    let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if v.norm() <= 1.0 {
                        break v;
                    }
                };
                let mut s = GaussianSplat::isotropic(center + p, 0.03, rng.random_range(0.9..1.0), rgb);
                s.rotation = UnitQuaternion::from_euler_angles(rng.random(), rng.random(), rng.random());
                for f in s.features.flat_mut().iter_mut().skip(1) {
                    *f += rng.random_range(-0.1..0.1);
                }
                s
            })
            .collect();
        GaussianField::new(splats)
    };
    let a = ball(Vector3::zeros(), [0.9, 0.2, 0.2], &mut rng);
    let b = ball(Vector3::new(1.2, 0.3, 0.0), [0.2, 0.2, 0.9], &mut rng);
    (a, b)
}

/// Sphere of `n` splats (Fibonacci layout) colored `top` above `z = split`
/// (unit radius) and `bottom` elsewhere.
pub fn two_tone_sphere(n: usize, split: f64, top: [f64; 3], bottom: [f64; 3]) -> GaussianField {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let radius = 2.2 / (n as f64).sqrt();
    let splats = (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            let p = Vector3::new(r * t.cos(), r * t.sin(), z);
            GaussianSplat::isotropic(p, radius, 0.99, if z > split { top } else { bottom })
        })
        .collect();
    GaussianField::new(splats)
}

/// Measurements of one two-cube run.
#[derive(Debug, Clone)]
pub struct TwoCubeReport {
    pub initial_feature_loss: f64,
    pub final_feature_loss: f64,
    pub seam_before: f64,
    pub seam_after: f64,
    pub content: ContentStats,
    pub palette_distance: f64,
    pub boundary_len: usize,
    pub outcome: StitchOutcome,
}

impl TwoCubeReport {
    pub fn seam_reduction(&self) -> f64 {
        1.0 - self.seam_after / self.seam_before
    }
}

/// Target splats at least half the cube size away from every boundary
/// splat: the far side whose texture should survive.
pub fn far_region(global_target: &GaussianField, boundary: &BoundarySet, size: f64) -> Vec<bool> {
    let bpos: Vec<Vector3<f64>> = boundary.indices.iter().map(|&i| global_target.splats[i].position).collect();
    global_target
        .positions()
        .map(|p| bpos.iter().all(|b| (p - b).norm() >= 0.5 * size))
        .collect()
}

/// Runs the optimizer on the two-cube fixture and measures seam, content
/// and palette agreement. Evaluation views are disjoint from the training
/// views.
pub fn run_two_cube(fixture: &TwoCubeFixture, spec: &TwoCubeSpec, config: StitchConfig) -> Result<TwoCubeReport, StitchError> {
    let boundary = identify_boundary(&fixture.target, &fixture.source, config.k, config.tau, config.beta_factor)
        .map_err(|_| StitchError::EmptyField)?;
    let global_target = fixture.target.baked().into_owned();
    let before = global_target.features();
    let initial_feature_loss = loss_feature(&before, &boundary).value;
    let view = ViewSpec::square(config.loss_resolution);

    let mut stitcher = Stitcher::new(&fixture.source, &fixture.target, boundary.clone(), None, config.clone())?;
    stitcher.run(&mut crate::optimize::NoProgress)?;
    let outcome = stitcher.into_outcome(false);
    let final_feature_loss = loss_feature(&outcome.features, &boundary).value;

    let mut after_field = global_target.clone();
    after_field.set_features(&outcome.features);

    let all: Vec<Vector3<f64>> = fixture.source.positions().chain(global_target.positions()).copied().collect();
    let sphere = BoundingSphere::of_points(all.iter()).expect("non-empty");
    let turntable = turntable_cameras(sphere.center, sphere.radius * config.camera_radius_factor, 8, 20.0, view);
    let window = (config.loss_resolution / 16).max(2);
    let seam_before = seam_discontinuity(&fixture.source.splats, &global_target.splats, &turntable, window).mean_abs_diff;
    let seam_after = seam_discontinuity(&fixture.source.splats, &after_field.splats, &turntable, window).mean_abs_diff;

    let local = BoundingSphere::of_points(fixture.target.positions()).expect("non-empty");
    let held_out: Vec<_> = sample_sphere_cameras(
        local.center,
        local.radius * config.camera_radius_factor,
        8,
        config.seed.wrapping_add(0x5eed_0ff5),
        view,
    )
    .into_iter()
    .map(|c| c.transformed(&fixture.target.local_to_global))
    .collect();
    let region = far_region(&global_target, &boundary, spec.size);
    let content = content_deviation(&global_target.splats, &before, &outcome.features, &region, &held_out);

    let palette = match &outcome.palette {
        Some(p) => p.clone(),
        None => crate::optimize::default_palette(&fixture.source, &config)?,
    };
    let global_views = sample_sphere_cameras(
        sphere.center,
        sphere.radius * config.camera_radius_factor,
        8,
        config.seed.wrapping_add(0x0be7_7e55),
        view,
    );
    let palette_distance = palette_distance(&after_field.splats, &palette, &global_views);

    Ok(TwoCubeReport {
        initial_feature_loss,
        final_feature_loss,
        seam_before,
        seam_after,
        content,
        palette_distance,
        boundary_len: boundary.len(),
        outcome,
    })
}
