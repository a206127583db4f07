//! Frozen-geometry rasterization.
//!
//! A [`RenderPlan`] records, for every pixel, which splats contribute and with
//! what compositing weight `w = alpha * T`. With geometry fixed, a rendered
//! pixel is `sum_i w_i * (0.5 + <f_i, Y(d_i)>)`, an affine function of the SH
//! coefficients, so rendering and its adjoint are both cheap passes over the
//! plan.

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use super::camera::Camera;
use super::image::ImageBuffer;
use crate::sh::{eval_with_basis, sh_basis};
use crate::splat::{GaussianSplat, ShFeatures, SH_COEFFS};

/// Compositing stops once transmittance would fall below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Per-splat alpha below this is skipped.
pub const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Alpha is capped below 1 so transmittance never collapses in one step.
pub const MAX_ALPHA: f64 = 0.99;
/// Screen-space dilation added to every projected covariance (pixels²).
pub const COVARIANCE_DILATION: f64 = 0.3;

const BAND_ROWS: u32 = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("plan covers {expected} splats but {got} feature blocks were given")]
    FeatureCount { expected: usize, got: usize },
    #[error("image size mismatch")]
    ImageSize,
}

/// Unit direction used to evaluate a splat's SH color: from the camera
/// center toward the splat, as 3DGS trainers do.
#[inline]
pub fn view_direction(splat: &Vector3<f64>, camera: &Vector3<f64>) -> Vector3<f64> {
    (splat - camera).try_normalize(0.0).unwrap_or_else(Vector3::z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub splat: u32,
    pub weight: f32,
}

#[derive(Debug, Clone)]
pub struct RenderPlan {
    width: u32,
    height: u32,
    splat_count: usize,
    offsets: Vec<u32>,
    entries: Vec<PlanEntry>,
    alpha: Vec<f64>,
    basis: Vec<[f64; SH_COEFFS]>,
    directions: Vec<Vector3<f64>>,
    visible: Vec<u32>,
}

struct Projected {
    index: u32,
    depth: f64,
    mean: (f64, f64),
    conic: (f64, f64, f64),
    opacity: f64,
    bbox: (u32, u32, u32, u32),
}

fn project(i: usize, s: &GaussianSplat, cam: &Camera) -> Option<Projected> {
    let t = cam.world_to_camera(&s.position);
    if t.z <= cam.near || t.z >= cam.far {
        return None;
    }
    let r = s.rotation.to_rotation_matrix().into_inner();
    let d = Matrix3::from_diagonal(&s.scale.component_mul(&s.scale));
    let sigma = r * d * r.transpose();
    let w = cam.rotation.inverse().to_rotation_matrix().into_inner();
    let sigma_cam = w * sigma * w.transpose();

    // Clamp the Jacobian's lateral terms as 3DGS does, so splats near the
    // frustum edge do not blow up.
    let lim_x = 1.3 * (0.5 * cam.width as f64 / cam.fx);
    let lim_y = 1.3 * (0.5 * cam.height as f64 / cam.fy);
    let tx = (t.x / t.z).clamp(-lim_x, lim_x) * t.z;
    let ty = (t.y / t.z).clamp(-lim_y, lim_y) * t.z;
    let j = nalgebra::Matrix2x3::new(
        cam.fx / t.z,
        0.0,
        -cam.fx * tx / (t.z * t.z),
        0.0,
        cam.fy / t.z,
        -cam.fy * ty / (t.z * t.z),
    );
    let mut cov: Matrix2<f64> = j * sigma_cam * j.transpose();
    cov[(0, 0)] += COVARIANCE_DILATION;
    cov[(1, 1)] += COVARIANCE_DILATION;
    let det = cov.determinant();
    if !(det > 0.0) {
        return None;
    }
    let conic = (cov[(1, 1)] / det, -cov[(0, 1)] / det, cov[(0, 0)] / det);
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let lambda = mid + (mid * mid - det).max(0.1).sqrt();
    let radius = (3.0 * lambda.sqrt()).ceil();

    let u = cam.fx * t.x / t.z + cam.cx;
    let v = cam.fy * t.y / t.z + cam.cy;
    let x0 = (u - radius).floor().max(0.0);
    let y0 = (v - radius).floor().max(0.0);
    let x1 = (u + radius).ceil().min(cam.width as f64);
    let y1 = (v + radius).ceil().min(cam.height as f64);
    if x0 >= x1 || y0 >= y1 {
        return None;
    }
    Some(Projected {
        index: i as u32,
        depth: t.z,
        mean: (u, v),
        conic,
        opacity: s.opacity,
        bbox: (x0 as u32, y0 as u32, x1 as u32, y1 as u32),
    })
}

impl RenderPlan {
    /// Projects and depth-sorts `splats` for `camera` and composites every
    /// pixel front to back.
    pub fn build(splats: &[GaussianSplat], camera: &Camera) -> RenderPlan {
        let (w, h) = (camera.width, camera.height);
        let mut projected: Vec<Projected> =
            splats.par_iter().enumerate().filter_map(|(i, s)| project(i, s, camera)).collect();
        projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

        let bands: Vec<(u32, u32)> = (0..h).step_by(BAND_ROWS as usize).map(|y| (y, (y + BAND_ROWS).min(h))).collect();
        let band_lists: Vec<Vec<Vec<PlanEntry>>> = bands
            .par_iter()
            .map(|&(y0, y1)| {
                let rows = (y1 - y0) as usize;
                let mut lists: Vec<Vec<PlanEntry>> = vec![Vec::new(); rows * w as usize];
                let mut trans = vec![1.0f64; rows * w as usize];
                let mut done = vec![false; rows * w as usize];
                for p in &projected {
                    let (bx0, by0, bx1, by1) = p.bbox;
                    if by1 <= y0 || by0 >= y1 {
                        continue;
                    }
                    let (a, b, c) = p.conic;
                    for y in by0.max(y0)..by1.min(y1) {
                        let dy = y as f64 + 0.5 - p.mean.1;
                        for x in bx0..bx1 {
                            let k = (y - y0) as usize * w as usize + x as usize;
                            if done[k] {
                                continue;
                            }
                            let dx = x as f64 + 0.5 - p.mean.0;
                            let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
                            if power > 0.0 {
                                continue;
                            }
                            let alpha = (p.opacity * power.exp()).min(MAX_ALPHA);
                            if alpha < MIN_ALPHA {
                                continue;
                            }
                            let t = trans[k];
                            let next = t * (1.0 - alpha);
                            if next < TRANSMITTANCE_CUTOFF {
                                done[k] = true;
                                continue;
                            }
                            lists[k].push(PlanEntry { splat: p.index, weight: (alpha * t) as f32 });
                            trans[k] = next;
                        }
                    }
                }
                lists
            })
            .collect();

        let mut offsets = Vec::with_capacity((w * h) as usize + 1);
        let mut entries = Vec::new();
        let mut alpha = Vec::with_capacity((w * h) as usize);
        offsets.push(0u32);
        for lists in band_lists {
            for list in lists {
                alpha.push(list.iter().map(|e| e.weight as f64).sum());
                entries.extend(list);
                offsets.push(entries.len() as u32);
            }
        }

        let mut seen = vec![false; splats.len()];
        for e in &entries {
            seen[e.splat as usize] = true;
        }
        let visible = (0..splats.len() as u32).filter(|&i| seen[i as usize]).collect();
        let directions: Vec<Vector3<f64>> =
            splats.iter().map(|s| view_direction(&s.position, &camera.position)).collect();
        let basis = directions.iter().map(sh_basis).collect();
        RenderPlan { width: w, height: h, splat_count: splats.len(), offsets, entries, alpha, basis, directions, visible }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn splat_count(&self) -> usize {
        self.splat_count
    }

    pub fn pixel_count(&self) -> usize {
        self.alpha.len()
    }

    /// Contributions to pixel `k` (row-major), front to back.
    pub fn pixel(&self, k: usize) -> &[PlanEntry] {
        &self.entries[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn direction(&self, splat: usize) -> &Vector3<f64> {
        &self.directions[splat]
    }

    pub fn basis(&self, splat: usize) -> &[f64; SH_COEFFS] {
        &self.basis[splat]
    }

    /// Splats with at least one plan entry, ascending.
    pub fn visible(&self) -> &[u32] {
        &self.visible
    }

    fn check(&self, features: &[ShFeatures]) -> Result<(), RenderError> {
        if features.len() != self.splat_count {
            return Err(RenderError::FeatureCount { expected: self.splat_count, got: features.len() });
        }
        Ok(())
    }

    /// SH colors of the visible splats, indexed by splat.
    fn splat_colors(&self, features: &[ShFeatures]) -> Vec<[f64; 3]> {
        let mut colors = vec![[0.0; 3]; self.splat_count];
        for &i in &self.visible {
            let i = i as usize;
            colors[i] = eval_with_basis(&features[i], &self.basis[i]);
        }
        colors
    }

    /// Pre-clamp render; affine in `features`. Carries the plan's alpha.
    pub fn render_linear(&self, features: &[ShFeatures]) -> Result<ImageBuffer, RenderError> {
        self.check(features)?;
        let colors = self.splat_colors(features);
        let rgb = (0..self.pixel_count())
            .map(|k| {
                let mut acc = [0.0; 3];
                for e in self.pixel(k) {
                    let c = &colors[e.splat as usize];
                    let w = e.weight as f64;
                    acc[0] += w * c[0];
                    acc[1] += w * c[1];
                    acc[2] += w * c[2];
                }
                acc
            })
            .collect();
        Ok(ImageBuffer { width: self.width, height: self.height, rgb, alpha: Some(self.alpha.clone()) })
    }

    /// Final frame, clamped to [0, 1].
    pub fn render(&self, features: &[ShFeatures]) -> Result<ImageBuffer, RenderError> {
        Ok(self.render_linear(features)?.clamped())
    }

    /// Accumulates `dL/df` into `grad` given `dL/dpixel` for the pre-clamp render.
    pub fn backward(&self, grad_image: &ImageBuffer, grad: &mut [ShFeatures]) -> Result<(), RenderError> {
        self.check(grad)?;
        if grad_image.width != self.width || grad_image.height != self.height {
            return Err(RenderError::ImageSize);
        }
        let mut color_grad = vec![[0.0f64; 3]; self.splat_count];
        for (k, g) in grad_image.rgb.iter().enumerate() {
            for e in self.pixel(k) {
                let w = e.weight as f64;
                let cg = &mut color_grad[e.splat as usize];
                cg[0] += w * g[0];
                cg[1] += w * g[1];
                cg[2] += w * g[2];
            }
        }
        for &i in &self.visible {
            let i = i as usize;
            let y = &self.basis[i];
            for c in 0..3 {
                let gc = color_grad[i][c];
                if gc == 0.0 {
                    continue;
                }
                for (dst, yk) in grad[i].0[c].iter_mut().zip(y) {
                    *dst += gc * yk;
                }
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: `RenderPlan::build`.
pub fn build_render_plan(splats: &[GaussianSplat], camera: &Camera) -> RenderPlan {
    RenderPlan::build(splats, camera)
}

/// Convenience wrapper: clamped render with alpha.
pub fn render(plan: &RenderPlan, features: &[ShFeatures]) -> Result<ImageBuffer, RenderError> {
    plan.render(features)
}
