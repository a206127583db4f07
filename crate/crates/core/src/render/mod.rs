//! Splat rasterization with cached compositing weights.

mod camera;
mod image;
mod plan;
mod sobel;
mod sphere;

pub use self::image::{ImageBuffer, ImageError};
pub use camera::{default_up, Camera, CameraError, ViewSpec, DEFAULT_FOV_Y_DEGREES};
pub use plan::{
    build_render_plan, render, view_direction, PlanEntry, RenderError, RenderPlan, MAX_ALPHA, MIN_ALPHA,
    TRANSMITTANCE_CUTOFF,
};
pub use sobel::{sobel, sobel_adjoint};
pub use sphere::{sample_sphere_cameras, turntable_cameras, BoundingSphere};

pub use crate::sh::{sh_basis, sh_eval, NonUnitDirection};

/// Default resolution of images that feed losses.
pub const DEFAULT_LOSS_RESOLUTION: u32 = 256;
/// Default resolution of preview frames.
pub const DEFAULT_PREVIEW_RESOLUTION: u32 = 800;
