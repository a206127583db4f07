//! The four loss terms. Each returns its value and the gradient with respect
//! to every target feature block; inputs outside the target are constants.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::clone::CloneTargets;
use super::palette::Palette;
use crate::render::{sobel, sobel_adjoint, view_direction, Camera, ImageBuffer, RenderError, RenderPlan};
use crate::sh::{eval_with_basis, sh_basis};
use crate::spatial::BoundarySet;
use crate::splat::ShFeatures;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("{plans} plans but {targets} cached gradient targets")]
    PlanCount { plans: usize, targets: usize },
    #[error("plan index {0} out of range")]
    PlanIndex(usize),
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<ShFeatures>,
}

impl LossEval {
    pub fn zero(n: usize) -> Self {
        Self { value: 0.0, grad: vec![ShFeatures::zeros(); n] }
    }
}

/// Mean over boundary members of the squared distance between their current
/// and target feature blocks.
pub fn loss_feature(features: &[ShFeatures], boundary: &BoundarySet) -> LossEval {
    let mut out = LossEval::zero(features.len());
    if boundary.is_empty() {
        return out;
    }
    let inv = 1.0 / boundary.len() as f64;
    for (&i, target) in boundary.indices.iter().zip(&boundary.target_features) {
        let diff = features[i] - *target;
        out.value += diff.flat().iter().map(|d| d * d).sum::<f64>() * inv;
        out.grad[i] += diff * (2.0 * inv);
    }
    out
}

/// Color propagation: each clone member, seen from each camera, should take
/// the mean color its driven boundary points show toward that same camera.
/// `snapshot` holds the (detached) feature values used for the boundary side;
/// it is indexed like `features`. Mean over members, cameras and channels.
pub fn loss_color(
    features: &[ShFeatures],
    snapshot: &[ShFeatures],
    clone: &CloneTargets,
    positions: &[Vector3<f64>],
    cameras: &[Camera],
) -> LossEval {
    let mut out = LossEval::zero(features.len());
    if clone.is_empty() || cameras.is_empty() {
        return out;
    }
    let norm = 1.0 / (clone.len() * cameras.len() * 3) as f64;
    // Boundary colors toward each camera, shared by every member they drive.
    let boundary_colors: Vec<Vec<[f64; 3]>> = cameras
        .iter()
        .map(|cam| {
            clone
                .boundary
                .iter()
                .map(|&b| eval_with_basis(&snapshot[b], &sh_basis(&view_direction(&positions[b], &cam.position))))
                .collect()
        })
        .collect();
    let per_member: Vec<(f64, ShFeatures)> = (0..clone.len())
        .into_par_iter()
        .map(|m| {
            let a = clone.members[m];
            let mut value = 0.0;
            let mut grad = ShFeatures::zeros();
            let driven = clone.driven(m);
            let inv = 1.0 / driven.len() as f64;
            for (cam, colors) in cameras.iter().zip(&boundary_colors) {
                let ya = sh_basis(&view_direction(&positions[a], &cam.position));
                let current = eval_with_basis(&features[a], &ya);
                let mut target = [0.0; 3];
                for &b in driven {
                    let c = &colors[b as usize];
                    for ch in 0..3 {
                        target[ch] += c[ch];
                    }
                }
                for ch in 0..3 {
                    let r = current[ch] - target[ch] * inv;
                    value += r * r;
                    let g = 2.0 * r * norm;
                    for (dst, y) in grad.0[ch].iter_mut().zip(&ya) {
                        *dst += g * y;
                    }
                }
            }
            (value * norm, grad)
        })
        .collect();
    for (m, (v, g)) in per_member.into_iter().enumerate() {
        out.value += v;
        out.grad[clone.members[m]] = g;
    }
    out
}

/// Minimum coverage for a pixel to take part in the gradient term.
pub const GRAD_ALPHA_MIN: f64 = 0.5;

/// Pixels whose whole 3x3 neighborhood (replicate-padded) has coverage above
/// [`GRAD_ALPHA_MIN`]. Sobel responses there see only splat colors, never
/// the empty background.
pub fn covered_mask(plan: &RenderPlan) -> Vec<bool> {
    let (w, h) = (plan.width() as i64, plan.height() as i64);
    let alpha = plan.alpha();
    let covered: Vec<bool> = alpha.iter().map(|&a| a > GRAD_ALPHA_MIN).collect();
    let mut out = vec![false; covered.len()];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = (-1..=1).all(|dy| {
                (-1..=1).all(|dx| covered[((y + dy).clamp(0, h - 1) * w + (x + dx).clamp(0, w - 1)) as usize])
            });
        }
    }
    out
}

/// Pre-clamp render divided by coverage (zero where coverage is at most
/// [`GRAD_ALPHA_MIN`]). Geometry is frozen, so this stays affine in the
/// features.
pub fn normalized_render(plan: &RenderPlan, features: &[ShFeatures]) -> Result<ImageBuffer, RenderError> {
    let mut img = plan.render_linear(features)?;
    for (px, &a) in img.rgb.iter_mut().zip(plan.alpha()) {
        let s = if a > GRAD_ALPHA_MIN { 1.0 / a } else { 0.0 };
        px.iter_mut().for_each(|v| *v *= s);
    }
    Ok(img)
}

/// Sobel responses of [`normalized_render`].
pub fn gradient_images(plan: &RenderPlan, features: &[ShFeatures]) -> Result<(ImageBuffer, ImageBuffer), RenderError> {
    Ok(sobel(&normalized_render(plan, features)?))
}

/// Content preservation: squared difference between the Sobel responses of
/// the current normalized renders and the cached ones, over the plans in
/// `selected`. Mean over covered pixels (see [`covered_mask`]) of the
/// selected plans, channels and both axes.
pub fn loss_grad(
    features: &[ShFeatures],
    plans: &[RenderPlan],
    targets: &[(ImageBuffer, ImageBuffer)],
    selected: &[usize],
) -> Result<LossEval, LossError> {
    if plans.len() != targets.len() {
        return Err(LossError::PlanCount { plans: plans.len(), targets: targets.len() });
    }
    if let Some(&bad) = selected.iter().find(|&&p| p >= plans.len()) {
        return Err(LossError::PlanIndex(bad));
    }
    let mut out = LossEval::zero(features.len());
    let masks: Vec<Vec<bool>> = selected.iter().map(|&p| covered_mask(&plans[p])).collect();
    let count: usize = masks.iter().map(|m| m.iter().filter(|&&v| v).count() * 6).sum();
    if count == 0 {
        return Ok(out);
    }
    let norm = 1.0 / count as f64;
    for (&p, mask) in selected.iter().zip(&masks) {
        let plan = &plans[p];
        let (gx, gy) = gradient_images(plan, features)?;
        let (tx, ty) = &targets[p];
        if tx.width != gx.width || tx.height != gx.height {
            return Err(RenderError::ImageSize.into());
        }
        let mut dx = ImageBuffer::new(gx.width, gx.height);
        let mut dy = ImageBuffer::new(gx.width, gx.height);
        for k in (0..gx.rgb.len()).filter(|&k| mask[k]) {
            for c in 0..3 {
                let rx = gx.rgb[k][c] - tx.rgb[k][c];
                let ry = gy.rgb[k][c] - ty.rgb[k][c];
                out.value += (rx * rx + ry * ry) * norm;
                dx.rgb[k][c] = 2.0 * rx * norm;
                dy.rgb[k][c] = 2.0 * ry * norm;
            }
        }
        let mut back = sobel_adjoint(&dx, &dy);
        for (px, &a) in back.rgb.iter_mut().zip(plan.alpha()) {
            let s = if a > GRAD_ALPHA_MIN { 1.0 / a } else { 0.0 };
            px.iter_mut().for_each(|v| *v *= s);
        }
        plan.backward(&back, &mut out.grad)?;
    }
    Ok(out)
}

/// Tune result with the number of pixels that passed the alpha mask.
#[derive(Debug, Clone)]
pub struct TuneEval {
    pub loss: LossEval,
    pub masked_pixels: usize,
}

/// Palette alignment: every sufficiently opaque pixel is pulled toward its
/// matched center, weighted by that center's weight. Mean over masked pixels.
pub fn loss_tune(
    features: &[ShFeatures],
    palette: &Palette,
    plans: &[RenderPlan],
    selected: &[usize],
    alpha_threshold: f64,
) -> Result<TuneEval, LossError> {
    if let Some(&bad) = selected.iter().find(|&&p| p >= plans.len()) {
        return Err(LossError::PlanIndex(bad));
    }
    let mut out = LossEval::zero(features.len());
    let mut images = Vec::with_capacity(selected.len());
    let mut masked = 0usize;
    for &p in selected {
        let img = plans[p].render_linear(features)?;
        masked += plans[p].alpha().iter().filter(|&&a| a > alpha_threshold).count();
        images.push(img);
    }
    if masked == 0 {
        log::debug!("tune loss: no pixel passed the alpha mask");
        return Ok(TuneEval { loss: out, masked_pixels: 0 });
    }
    let norm = 1.0 / masked as f64;
    for (img, &p) in images.iter().zip(selected) {
        let plan = &plans[p];
        let mut g = ImageBuffer::new(img.width, img.height);
        for (k, c) in img.rgb.iter().enumerate() {
            if plan.alpha()[k] <= alpha_threshold {
                continue;
            }
            let chi = palette.match_color(c);
            let w = palette.weights[chi];
            let center = palette.centers[chi];
            for ch in 0..3 {
                let r = c[ch] - center[ch];
                out.value += w * r * r * norm;
                g.rgb[k][ch] = 2.0 * w * r * norm;
            }
        }
        plan.backward(&g, &mut out.grad)?;
    }
    Ok(TuneEval { loss: out, masked_pixels: masked })
}
