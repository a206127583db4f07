//! Rigid placement of Gaussian fields, including rotation of the SH bands.
//!
//! Band matrices come from the Ivanic–Ruedenberg recurrence, which builds
//! band `l` from band 1 (a permutation of the 3x3 rotation) and band `l - 1`.
//! The recurrence works in the real SH basis without the Condon-Shortley
//! phase; the exporter basis differs from it by a `(-1)^m` sign per
//! coefficient, so each band is conjugated by that diagonal at the end.
//!
//! Convention: with `Y_l(d)` the band-`l` basis vector, the band matrix `D_l`
//! satisfies `Y_l(R d) = D_l Y_l(d)`, hence rotated coefficients are `D_l f`.

use nalgebra::{DMatrix, Matrix3, Quaternion, UnitQuaternion};

use crate::splat::{GaussianField, GaussianSplat, RigidTransform, ShFeatures, SH_DEGREE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransformError {
    #[error("rotation quaternion must be unit length (norm {0})")]
    NonUnitQuaternion(f64),
    #[error("only uniform scaling is supported")]
    NonUniformScale,
}

/// Per-band rotation matrices for bands 0..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct ShRotation {
    bands: [DMatrix<f64>; SH_DEGREE + 1],
}

impl ShRotation {
    pub fn identity() -> Self {
        Self { bands: std::array::from_fn(|l| DMatrix::identity(2 * l + 1, 2 * l + 1)) }
    }

    /// Band matrices for the rotation `q`, which must be unit within 1e-6.
    pub fn from_quaternion(q: &Quaternion<f64>) -> Result<Self, TransformError> {
        let n = q.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(TransformError::NonUnitQuaternion(n));
        }
        let r = UnitQuaternion::from_quaternion(*q).to_rotation_matrix().into_inner();
        Ok(Self::from_matrix(&r))
    }

    pub fn from_unit(q: &UnitQuaternion<f64>) -> Self {
        Self::from_matrix(q.to_rotation_matrix().matrix())
    }

    fn from_matrix(r: &Matrix3<f64>) -> Self {
        // Real SH band 1 is ordered (y, z, x).
        const PERM: [usize; 3] = [1, 2, 0];
        let band1 = DMatrix::from_fn(3, 3, |m, n| r[(PERM[m], PERM[n])]);
        let mut bands: [DMatrix<f64>; SH_DEGREE + 1] = std::array::from_fn(|_| DMatrix::zeros(0, 0));
        bands[0] = DMatrix::identity(1, 1);
        bands[1] = band1;
        for l in 2..=SH_DEGREE {
            bands[l] = next_band(&bands[1], &bands[l - 1], l as i32);
        }
        for (l, band) in bands.iter_mut().enumerate() {
            let size = 2 * l + 1;
            for i in 0..size {
                for j in 0..size {
                    let mi = i as i32 - l as i32;
                    let mj = j as i32 - l as i32;
                    if (mi + mj).rem_euclid(2) == 1 {
                        band[(i, j)] = -band[(i, j)];
                    }
                }
            }
        }
        Self { bands }
    }

    pub fn band(&self, l: usize) -> &DMatrix<f64> {
        &self.bands[l]
    }

    /// `self · other`, the rotation applying `other` first.
    pub fn compose(&self, other: &ShRotation) -> ShRotation {
        Self { bands: std::array::from_fn(|l| &self.bands[l] * &other.bands[l]) }
    }

    pub fn rotate(&self, f: &ShFeatures) -> ShFeatures {
        let mut out = ShFeatures::zeros();
        for c in 0..3 {
            for (l, band) in self.bands.iter().enumerate() {
                let off = l * l;
                let size = 2 * l + 1;
                for i in 0..size {
                    let mut acc = 0.0;
                    for j in 0..size {
                        acc += band[(i, j)] * f.0[c][off + j];
                    }
                    out.0[c][off + i] = acc;
                }
            }
        }
        out
    }
}

fn delta(a: i32, b: i32) -> f64 {
    if a == b {
        1.0
    } else {
        0.0
    }
}

/// Entry `(m, n)` of a band matrix stored with offset `l`.
fn at(band: &DMatrix<f64>, l: i32, m: i32, n: i32) -> f64 {
    band[((m + l) as usize, (n + l) as usize)]
}

fn p(r1: &DMatrix<f64>, prev: &DMatrix<f64>, i: i32, a: i32, b: i32, l: i32) -> f64 {
    let lp = l - 1;
    if b == l {
        at(r1, 1, i, 1) * at(prev, lp, a, l - 1) - at(r1, 1, i, -1) * at(prev, lp, a, -l + 1)
    } else if b == -l {
        at(r1, 1, i, 1) * at(prev, lp, a, -l + 1) + at(r1, 1, i, -1) * at(prev, lp, a, l - 1)
    } else {
        at(r1, 1, i, 0) * at(prev, lp, a, b)
    }
}

fn next_band(r1: &DMatrix<f64>, prev: &DMatrix<f64>, l: i32) -> DMatrix<f64> {
    let size = (2 * l + 1) as usize;
    let mut out = DMatrix::zeros(size, size);
    for m in -l..=l {
        for n in -l..=l {
            let d = delta(m, 0);
            let denom = if n.abs() == l { (2 * l * (2 * l - 1)) as f64 } else { ((l + n) * (l - n)) as f64 };
            let u = (((l + m) * (l - m)) as f64 / denom).sqrt();
            let v = 0.5 * ((1.0 + d) * ((l + m.abs() - 1) * (l + m.abs())) as f64 / denom).sqrt() * (1.0 - 2.0 * d);
            let w = -0.5 * (((l - m.abs() - 1) * (l - m.abs())) as f64 / denom).sqrt() * (1.0 - d);

            let mut value = 0.0;
            if u != 0.0 {
                value += u * p(r1, prev, 0, m, n, l);
            }
            if v != 0.0 {
                let vv = if m == 0 {
                    p(r1, prev, 1, 1, n, l) + p(r1, prev, -1, -1, n, l)
                } else if m > 0 {
                    p(r1, prev, 1, m - 1, n, l) * (1.0 + delta(m, 1)).sqrt()
                        - p(r1, prev, -1, -m + 1, n, l) * (1.0 - delta(m, 1))
                } else {
                    p(r1, prev, 1, m + 1, n, l) * (1.0 - delta(m, -1))
                        + p(r1, prev, -1, -m - 1, n, l) * (1.0 + delta(m, -1)).sqrt()
                };
                value += v * vv;
            }
            if w != 0.0 {
                let ww = if m > 0 {
                    p(r1, prev, 1, m + 1, n, l) + p(r1, prev, -1, -m - 1, n, l)
                } else {
                    p(r1, prev, 1, m - 1, n, l) - p(r1, prev, -1, -m + 1, n, l)
                };
                value += w * ww;
            }
            out[((m + l) as usize, (n + l) as usize)] = value;
        }
    }
    out
}

/// Convenience wrapper over [`ShRotation::from_quaternion`].
pub fn sh_rotation_from_quaternion(q: &Quaternion<f64>) -> Result<ShRotation, TransformError> {
    ShRotation::from_quaternion(q)
}

fn transform_splat(s: &GaussianSplat, t: &RigidTransform, rot: &ShRotation) -> GaussianSplat {
    GaussianSplat {
        position: t.apply_point(&s.position),
        rotation: t.rotation * s.rotation,
        scale: s.scale * t.scale,
        opacity: s.opacity,
        features: rot.rotate(&s.features),
    }
}

/// Maps every splat of `field` through `t`: `x' = s R x + t`, scales times
/// `s`, orientation `q' = q̂ q`, SH bands rotated by `q̂`. The field's own
/// `local_to_global` is composed with `t`'s inverse so the global placement of
/// the result stays consistent with the input's.
pub fn apply_rigid_transform(field: &GaussianField, t: &RigidTransform) -> GaussianField {
    let rot = ShRotation::from_unit(&t.rotation);
    let identity_rot = t.rotation.angle() == 0.0;
    let splats = field
        .splats
        .iter()
        .map(|s| {
            let mut out = transform_splat(s, t, &rot);
            if identity_rot {
                out.features = s.features;
            }
            out
        })
        .collect();
    GaussianField {
        splats,
        local_to_global: field.local_to_global,
        role: field.role,
        selection: field.selection.clone(),
    }
}

/// Applies the field's own `local_to_global` to its splats and resets the
/// transform to identity.
pub fn bake(field: &GaussianField) -> GaussianField {
    let mut out = apply_rigid_transform(field, &field.local_to_global);
    out.local_to_global = RigidTransform::identity();
    out
}

/// Rejects per-axis scales, which have no counterpart in SH rotation.
pub fn uniform_scale(scale: [f64; 3]) -> Result<f64, TransformError> {
    let s = scale[0];
    if scale.iter().any(|&v| (v - s).abs() > 1e-12 * s.abs().max(1.0)) {
        return Err(TransformError::NonUniformScale);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::sh_eval;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        UnitQuaternion::from_quaternion(q)
    }

    fn random_features(rng: &mut impl Rng) -> ShFeatures {
        let mut f = ShFeatures::zeros();
        f.flat_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        f
    }

    fn random_dir(rng: &mut impl Rng) -> Vector3<f64> {
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            .normalize()
    }

    #[test]
    fn identity_quaternion_gives_identity_bands() {
        let r = ShRotation::from_quaternion(&Quaternion::identity()).unwrap();
        for l in 0..=3 {
            let n = 2 * l + 1;
            assert!((r.band(l) - DMatrix::identity(n, n)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn antipodal_quaternions_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_quat(&mut rng);
        let a = ShRotation::from_quaternion(q.quaternion()).unwrap();
        let b = ShRotation::from_quaternion(&-q.into_inner()).unwrap();
        for l in 0..=3 {
            assert!((a.band(l) - b.band(l)).abs().max() < 1e-14);
        }
    }

    #[test]
    fn bands_are_orthogonal_and_band0_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let r = ShRotation::from_unit(&random_quat(&mut rng));
            assert_eq!(r.band(0)[(0, 0)], 1.0);
            for l in 1..=3 {
                let m = r.band(l);
                let err = (m.transpose() * m - DMatrix::identity(2 * l + 1, 2 * l + 1)).abs().max();
                assert!(err < 1e-6, "band {l}: {err}");
            }
        }
    }

    #[test]
    fn view_consistency_on_random_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_quat(&mut rng);
        let rot = ShRotation::from_unit(&q);
        let f = random_features(&mut rng);
        let g = rot.rotate(&f);
        for _ in 0..100 {
            let d = random_dir(&mut rng);
            let a = sh_eval(&f, &d).unwrap();
            let b = sh_eval(&g, &(q * d)).unwrap();
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-6, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn composition_matches_product_quaternion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let q1 = random_quat(&mut rng);
            let q2 = random_quat(&mut rng);
            let composed = ShRotation::from_unit(&q2).compose(&ShRotation::from_unit(&q1));
            let direct = ShRotation::from_unit(&(q2 * q1));
            for l in 0..=3 {
                assert!((composed.band(l) - direct.band(l)).abs().max() < 1e-5);
            }
        }
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(matches!(
            ShRotation::from_quaternion(&Quaternion::new(1.1, 0.0, 0.0, 0.0)),
            Err(TransformError::NonUnitQuaternion(_))
        ));
    }

    fn sample_field(rng: &mut impl Rng, n: usize) -> GaussianField {
        let splats = (0..n)
            .map(|_| GaussianSplat {
                position: Vector3::new(rng.random(), rng.random(), rng.random()),
                rotation: random_quat(rng),
                scale: Vector3::new(0.01 + rng.random::<f64>(), 0.02, 0.03),
                opacity: 0.7,
                features: random_features(rng),
            })
            .collect();
        GaussianField::new(splats)
    }

    #[test]
    fn identity_transform_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let field = sample_field(&mut rng, 20);
        let out = apply_rigid_transform(&field, &RigidTransform::identity());
        for (a, b) in field.splats.iter().zip(&out.splats) {
            assert!((a.position - b.position).norm() < 1e-7);
            assert!(a.features.squared_distance(&b.features) < 1e-14);
            assert!((a.rotation.into_inner() - b.rotation.into_inner()).norm() < 1e-7);
        }
    }

    #[test]
    fn translation_and_scale_leave_features_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let field = sample_field(&mut rng, 20);
        let t = RigidTransform::new([1.0, 0.0, 0.0, 0.0], [3.0, -1.0, 2.0], 2.5).unwrap();
        let out = apply_rigid_transform(&field, &t);
        for (a, b) in field.splats.iter().zip(&out.splats) {
            assert_eq!(a.features, b.features);
            assert!((b.position - (a.position * 2.5 + Vector3::new(3.0, -1.0, 2.0))).norm() < 1e-12);
            assert!((b.scale - a.scale * 2.5).norm() < 1e-12);
        }
    }

    fn covariance(s: &GaussianSplat) -> Matrix3<f64> {
        let r = s.rotation.to_rotation_matrix().into_inner();
        let d = Matrix3::from_diagonal(&s.scale.component_mul(&s.scale));
        r * d * r.transpose()
    }

    #[test]
    fn covariance_rotates_with_the_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let field = sample_field(&mut rng, 10);
        let q = random_quat(&mut rng);
        let t = RigidTransform { rotation: q, translation: Vector3::zeros(), scale: 1.0 };
        let out = apply_rigid_transform(&field, &t);
        let r = q.to_rotation_matrix().into_inner();
        for (a, b) in field.splats.iter().zip(&out.splats) {
            let expect = r * covariance(a) * r.transpose();
            assert!((covariance(b) - expect).abs().max() < 1e-12);
        }
    }

    #[test]
    fn red_lobe_follows_quarter_turn() {
        // Degree-1 lobe brighter toward +x: Y_{1,1} = -C1 x, so a negative coefficient.
        let mut f = ShFeatures::zeros();
        f.0[0][3] = -1.0;
        let splat = GaussianSplat { features: f, ..GaussianSplat::isotropic(Vector3::zeros(), 0.1, 0.9, [0.5; 3]) };
        let field = GaussianField::new(vec![splat]);
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let out = apply_rigid_transform(&field, &RigidTransform::from_rotation(q));
        let brightest = |f: &ShFeatures| {
            (0..8)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::FRAC_PI_4;
                    let d = Vector3::new(a.cos(), a.sin(), 0.0);
                    (k, sh_eval(f, &d).unwrap()[0])
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        };
        assert_eq!(brightest(&field.splats[0].features), 0);
        assert_eq!(brightest(&out.splats[0].features), 2);
    }

    #[test]
    fn uniform_scale_check() {
        assert_eq!(uniform_scale([2.0, 2.0, 2.0]), Ok(2.0));
        assert_eq!(uniform_scale([2.0, 1.0, 2.0]), Err(TransformError::NonUniformScale));
    }
}
