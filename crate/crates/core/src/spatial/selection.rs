use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::render::{Camera, CameraError};
use crate::splat::GaussianField;

/// Fraction of the field size that the brush reaches behind the front-most
/// splat under the cursor.
pub const BRUSH_DEPTH_BAND: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectionError {
    #[error("selection box has a zero or negative extent")]
    DegenerateBox,
    #[error("selection is empty")]
    Empty,
    #[error("selection mask has {got} entries for {expected} splats")]
    MaskLength { got: usize, expected: usize },
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Box in global space: `center`, per-axis half extents, and orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
    #[serde(default = "UnitQuaternion::identity")]
    pub rotation: UnitQuaternion<f64>,
}

impl OrientedBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let local = self.rotation.inverse() * (p - self.center);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BrushMode {
    Add,
    Remove,
}

/// Mask of splats whose global-space centers lie inside `bbox`.
pub fn select_box(field: &GaussianField, bbox: &OrientedBox) -> Result<Vec<bool>, SelectionError> {
    if bbox.half_extents.iter().any(|&h| !(h > 0.0)) {
        return Err(SelectionError::DegenerateBox);
    }
    Ok(field.global_positions().iter().map(|p| bbox.contains(p)).collect())
}

/// Brush stroke at `center` (pixels) with `radius` (pixels) applied to the
/// field's current selection. Only splats within the front surface band,
/// `BRUSH_DEPTH_BAND * scene size` behind the nearest hit, are touched.
pub fn select_brush(
    field: &GaussianField,
    camera: &Camera,
    center: Vector2<f64>,
    radius: f64,
    mode: BrushMode,
) -> Result<Vec<bool>, SelectionError> {
    camera.validate()?;
    if field.selection.len() != field.len() {
        return Err(SelectionError::MaskLength { got: field.selection.len(), expected: field.len() });
    }
    let positions = field.global_positions();
    let hits: Vec<(usize, f64)> = positions
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (u, v, z) = camera.project(p)?;
            let inside = (u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64)
                && (Vector2::new(u, v) - center).norm() < radius;
            inside.then_some((i, z))
        })
        .collect();
    let mut mask = field.selection.clone();
    let Some(front) = hits.iter().map(|h| h.1).reduce(f64::min) else {
        return Ok(mask);
    };
    let size = field.bounds().map_or(0.0, |b| b.diagonal()) * field.local_to_global.scale;
    let limit = front + BRUSH_DEPTH_BAND * size;
    for (i, z) in hits {
        if z <= limit {
            mask[i] = mode == BrushMode::Add;
        }
    }
    Ok(mask)
}

/// New field holding only the selected splats, in their original order.
pub fn extract_selection(field: &GaussianField) -> Result<GaussianField, SelectionError> {
    if field.selection.len() != field.len() {
        return Err(SelectionError::MaskLength { got: field.selection.len(), expected: field.len() });
    }
    let splats: Vec<_> =
        field.splats.iter().zip(&field.selection).filter(|(_, &sel)| sel).map(|(s, _)| s.clone()).collect();
    if splats.is_empty() {
        return Err(SelectionError::Empty);
    }
    let n = splats.len();
    Ok(GaussianField { splats, local_to_global: field.local_to_global, role: field.role, selection: vec![false; n] })
}
