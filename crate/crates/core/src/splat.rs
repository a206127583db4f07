//! Gaussian primitives, fields and the rigid transforms that place them.
//!
//! All quantities are held in their *activated* form: opacity in (0, 1),
//! strictly positive scales and unit quaternions. The PLY reader/writer owns
//! the conversion to and from the logit / log-scale disk encoding.

use std::borrow::Cow;
use std::ops::{Add, AddAssign, Mul, Sub};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Highest supported spherical-harmonics degree.
pub const SH_DEGREE: usize = 3;
/// Coefficients per color channel at [`SH_DEGREE`].
pub const SH_COEFFS: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);
/// Zeroth-order real SH constant, `1 / (2 sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Spherical-harmonics coefficient block, channel-major: `coeffs[channel][k]`
/// with `k = l * l + (m + l)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShFeatures(pub [[f64; SH_COEFFS]; 3]);

impl Default for ShFeatures {
    fn default() -> Self {
        Self::zeros()
    }
}

impl ShFeatures {
    pub const LEN: usize = 3 * SH_COEFFS;

    pub const fn zeros() -> Self {
        Self([[0.0; SH_COEFFS]; 3])
    }

    /// View-independent block whose evaluated color is `rgb` in every direction.
    pub fn from_rgb(rgb: [f64; 3]) -> Self {
        let mut f = Self::zeros();
        for c in 0..3 {
            f.0[c][0] = rgb_to_dc(rgb[c]);
        }
        f
    }

    /// Color carried by the DC term alone.
    pub fn dc_color(&self) -> [f64; 3] {
        [0, 1, 2].map(|c| dc_to_rgb(self.0[c][0]))
    }

    /// All coefficients as one channel-major slice of length [`Self::LEN`].
    pub fn flat(&self) -> &[f64] {
        self.0.as_flattened()
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.0.as_flattened_mut()
    }

    pub fn squared_distance(&self, other: &Self) -> f64 {
        self.flat()
            .iter()
            .zip(other.flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

impl Add for ShFeatures {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for ShFeatures {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.flat_mut().iter_mut().zip(rhs.flat()) {
            *a += b;
        }
    }
}

impl Sub for ShFeatures {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.flat_mut().iter_mut().zip(rhs.flat()) {
            *a -= b;
        }
        self
    }
}

impl Mul<f64> for ShFeatures {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        for a in self.flat_mut().iter_mut() {
            *a *= rhs;
        }
        self
    }
}

/// DC coefficient to color, `0.5 + C0 * dc`.
pub fn dc_to_rgb(dc: f64) -> f64 {
    0.5 + SH_C0 * dc
}

pub fn rgb_to_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One anisotropic Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSplat {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub features: ShFeatures,
}

impl GaussianSplat {
    /// Isotropic splat with a constant color.
    pub fn isotropic(position: Vector3<f64>, radius: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        Self {
            position,
            rotation: UnitQuaternion::identity(),
            scale: Vector3::repeat(radius),
            opacity,
            features: ShFeatures::from_rgb(rgb),
        }
    }
}

/// Similarity transform `x' = s R x + t` with a scalar scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TransformSpecError {
    #[error("transform scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("transform quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    /// Builds a transform from a `(w, x, y, z)` quaternion, normalizing it.
    pub fn new(quat: [f64; 4], translation: [f64; 3], scale: f64) -> Result<Self, TransformSpecError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(TransformSpecError::NonPositiveScale(scale));
        }
        let q = Quaternion::new(quat[0], quat[1], quat[2], quat[3]);
        let n = q.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(TransformSpecError::DegenerateQuaternion);
        }
        Ok(Self {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::from(translation),
            scale,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    pub fn from_rotation(q: UnitQuaternion<f64>) -> Self {
        Self { rotation: q, ..Self::identity() }
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.translation == Vector3::zeros() && self.rotation.angle() == 0.0
    }

    pub fn apply_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn inverse_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation) / self.scale
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.apply_point(&other.translation),
            scale: self.scale * other.scale,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RigidTransformJson {
    quat: [f64; 4],
    translation: [f64; 3],
    scale: f64,
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let q = self.rotation.quaternion();
        RigidTransformJson {
            quat: [q.w, q.i, q.j, q.k],
            translation: self.translation.into(),
            scale: self.scale,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RigidTransformJson::deserialize(d)?;
        RigidTransform::new(raw.quat, raw.translation, raw.scale).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldRole {
    Source,
    Target,
    #[default]
    Other,
}

/// Axis-aligned bounds of a point set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut b = Aabb { min: first, max: first };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&other.min), max: self.max.sup(&other.max) }
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }
}

/// Ordered splats in local coordinates plus their placement in the composite.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianField {
    pub splats: Vec<GaussianSplat>,
    pub local_to_global: RigidTransform,
    pub role: FieldRole,
    pub selection: Vec<bool>,
}

impl GaussianField {
    pub fn new(splats: Vec<GaussianSplat>) -> Self {
        let n = splats.len();
        Self {
            splats,
            local_to_global: RigidTransform::identity(),
            role: FieldRole::Other,
            selection: vec![false; n],
        }
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vector3<f64>> + Clone {
        self.splats.iter().map(|s| &s.position)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.positions())
    }

    /// Diagonal of the bounding box of the stored positions.
    pub fn scene_size(&self) -> f64 {
        self.bounds().map_or(0.0, |b| b.diagonal())
    }

    /// Global-space positions, applying `local_to_global` when it is not identity.
    pub fn global_positions(&self) -> Vec<Vector3<f64>> {
        if self.local_to_global.is_identity() {
            self.splats.iter().map(|s| s.position).collect()
        } else {
            self.splats.iter().map(|s| self.local_to_global.apply_point(&s.position)).collect()
        }
    }

    /// The field with its transform baked into the splats (borrowed if already global).
    pub fn baked(&self) -> Cow<'_, GaussianField> {
        if self.local_to_global.is_identity() {
            Cow::Borrowed(self)
        } else {
            Cow::Owned(crate::transform::bake(self))
        }
    }

    pub fn features(&self) -> Vec<ShFeatures> {
        self.splats.iter().map(|s| s.features).collect()
    }

    pub fn set_features(&mut self, features: &[ShFeatures]) {
        assert_eq!(features.len(), self.splats.len(), "feature count mismatch");
        for (s, f) in self.splats.iter_mut().zip(features) {
            s.features = *f;
        }
    }

    pub fn selected_count(&self) -> usize {
        self.selection.iter().filter(|&&s| s).count()
    }
}

/// Diagonal of the bounding box spanning every field, in global space.
pub fn composite_scene_size(fields: &[&GaussianField]) -> f64 {
    fields
        .iter()
        .filter_map(|f| Aabb::from_points(f.global_positions().iter()))
        .reduce(|a, b| a.merge(&b))
        .map_or(0.0, |b| b.diagonal())
}

/// Concatenates fields after baking their transforms.
pub fn merge_fields(fields: &[&GaussianField]) -> GaussianField {
    let splats: Vec<GaussianSplat> = fields.iter().flat_map(|f| f.baked().splats.clone()).collect();
    GaussianField::new(splats)
}
