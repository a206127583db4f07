use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::splat::RigidTransform;

pub const DEFAULT_FOV_Y_DEGREES: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive")]
    NonPositiveFocal,
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("look-at eye and target coincide")]
    DegenerateLookAt,
}

/// Pinhole camera. Camera space is x right, y down, z forward; `rotation`
/// maps camera-space vectors to world space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub rotation: UnitQuaternion<f64>,
    pub position: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Resolution and field of view shared by a batch of generated cameras.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub width: u32,
    pub height: u32,
    pub fov_y_degrees: f64,
}

impl ViewSpec {
    pub fn square(size: u32) -> Self {
        Self { width: size, height: size, fov_y_degrees: DEFAULT_FOV_Y_DEGREES }
    }
}

/// Up-vector rule for generated cameras: world +z unless the viewing
/// direction is within 1 degree of ±z, then +x.
pub fn default_up(forward: &Vector3<f64>) -> Vector3<f64> {
    let cos_limit = 1f64.to_radians().cos();
    if forward.normalize().z.abs() > cos_limit {
        Vector3::x()
    } else {
        Vector3::z()
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::NonPositiveFocal);
        }
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage);
        }
        Ok(())
    }

    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, view: ViewSpec) -> Result<Self, CameraError> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(CameraError::DegenerateLookAt);
        }
        Self::look_at_with_up(eye, target, default_up(&forward), view)
    }

    pub fn look_at_with_up(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        view: ViewSpec,
    ) -> Result<Self, CameraError> {
        let forward = (target - eye).try_normalize(0.0).ok_or(CameraError::DegenerateLookAt)?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or(CameraError::DegenerateLookAt)?;
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        let fy = 0.5 * view.height as f64 / (0.5 * view.fov_y_degrees.to_radians()).tan();
        let dist = (target - eye).norm();
        let cam = Self {
            rotation,
            position: eye,
            fx: fy,
            fy,
            cx: 0.5 * view.width as f64,
            cy: 0.5 * view.height as f64,
            width: view.width,
            height: view.height,
            near: 0.01 * dist,
            far: 100.0 * dist,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.position)
    }

    /// Pixel coordinates (continuous, pixel centers at `i + 0.5`) and depth.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.world_to_camera(p);
        if c.z <= self.near || c.z >= self.far {
            return None;
        }
        Some((self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    /// The same view of a scene mapped through `t` (scale moves the eye, not the optics).
    pub fn transformed(&self, t: &RigidTransform) -> Camera {
        Camera {
            rotation: t.rotation * self.rotation,
            position: t.apply_point(&self.position),
            near: self.near * t.scale,
            far: self.far * t.scale,
            ..self.clone()
        }
    }
}
