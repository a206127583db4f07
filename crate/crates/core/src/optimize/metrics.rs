//! Image-space measurements of a stitch: seam color jump, content drift
//! and palette distance.

use crate::render::{sobel, Camera, RenderPlan};
use crate::splat::{GaussianSplat, ShFeatures};

use super::palette::Palette;

const OPAQUE: f64 = 0.95;
const DOMINANT: f64 = 0.9;

/// Share of each pixel's compositing weight that comes from splats with
/// `flag[i]` set. Zero for empty pixels.
fn weight_share(plan: &RenderPlan, flag: &[bool]) -> Vec<f64> {
    (0..plan.pixel_count())
        .map(|k| {
            let a = plan.alpha()[k];
            if a <= 0.0 {
                return 0.0;
            }
            let s: f64 = plan.pixel(k).iter().filter(|e| flag[e.splat as usize]).map(|e| e.weight as f64).sum();
            s / a
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeamStats {
    /// Mean absolute color difference (averaged over channels) between
    /// neighboring source- and target-dominated pixels.
    pub mean_abs_diff: f64,
    pub pairs: usize,
}

/// Renders `source` and `target` together and compares every opaque
/// source-dominated pixel with every opaque target-dominated pixel within
/// `radius` pixels (Chebyshev).
pub fn seam_discontinuity(source: &[GaussianSplat], target: &[GaussianSplat], cameras: &[Camera], radius: u32) -> SeamStats {
    let splats: Vec<GaussianSplat> = source.iter().chain(target).cloned().collect();
    let features: Vec<ShFeatures> = splats.iter().map(|s| s.features).collect();
    let is_target: Vec<bool> = (0..splats.len()).map(|i| i >= source.len()).collect();
    let r = radius as i64;
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for cam in cameras {
        let plan = RenderPlan::build(&splats, cam);
        let img = plan.render(&features).expect("features match plan");
        let share = weight_share(&plan, &is_target);
        let (w, h) = (plan.width() as i64, plan.height() as i64);
        let label = |k: usize| -> Option<bool> {
            if plan.alpha()[k] <= OPAQUE {
                None
            } else if share[k] > DOMINANT {
                Some(true)
            } else if share[k] < 1.0 - DOMINANT {
                Some(false)
            } else {
                None
            }
        };
        for y in 0..h {
            for x in 0..w {
                let p = (y * w + x) as usize;
                if label(p) != Some(false) {
                    continue;
                }
                for yy in (y - r).max(0)..=(y + r).min(h - 1) {
                    for xx in (x - r).max(0)..=(x + r).min(w - 1) {
                        let q = (yy * w + xx) as usize;
                        if label(q) == Some(true) {
                            let (a, b) = (img.rgb[p], img.rgb[q]);
                            sum += ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0;
                            pairs += 1;
                        }
                    }
                }
            }
        }
    }
    SeamStats { mean_abs_diff: if pairs > 0 { sum / pairs as f64 } else { 0.0 }, pairs }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContentStats {
    /// Mean |Sobel(after) - Sobel(before)| over evaluated pixels.
    pub mean_abs_deviation: f64,
    /// max - min of Sobel(before) over the same pixels.
    pub dynamic_range: f64,
    pub pixels: usize,
}

impl ContentStats {
    pub fn relative(&self) -> f64 {
        if self.dynamic_range > 0.0 {
            self.mean_abs_deviation / self.dynamic_range
        } else {
            0.0
        }
    }
}

/// Compares Sobel responses of `target` (global space) rendered alone with
/// `before` and `after` features. Only pixels whose 3x3 neighborhood is
/// opaque and dominated by splats flagged in `region` are evaluated.
pub fn content_deviation(
    target: &[GaussianSplat],
    before: &[ShFeatures],
    after: &[ShFeatures],
    region: &[bool],
    cameras: &[Camera],
) -> ContentStats {
    let mut dev = 0.0;
    let mut count = 0usize;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for cam in cameras {
        let plan = RenderPlan::build(target, cam);
        let (bx, by) = sobel(&plan.render(before).expect("features match plan"));
        let (ax, ay) = sobel(&plan.render(after).expect("features match plan"));
        let share = weight_share(&plan, region);
        let (w, h) = (plan.width() as i64, plan.height() as i64);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let ok = (-1..=1).all(|dy| {
                    (-1..=1).all(|dx| {
                        let q = ((y + dy) * w + x + dx) as usize;
                        plan.alpha()[q] > OPAQUE && share[q] > DOMINANT
                    })
                });
                if !ok {
                    continue;
                }
                let k = (y * w + x) as usize;
                for c in 0..3 {
                    for (b, a) in [(bx.rgb[k][c], ax.rgb[k][c]), (by.rgb[k][c], ay.rgb[k][c])] {
                        dev += (a - b).abs();
                        lo = lo.min(b);
                        hi = hi.max(b);
                        count += 1;
                    }
                }
            }
        }
    }
    ContentStats {
        mean_abs_deviation: if count > 0 { dev / count as f64 } else { 0.0 },
        dynamic_range: if count > 0 { hi - lo } else { 0.0 },
        pixels: count / 6,
    }
}

/// Mean distance from opaque rendered target pixels to their matched palette
/// centers, over `cameras`.
pub fn palette_distance(target: &[GaussianSplat], palette: &Palette, cameras: &[Camera]) -> f64 {
    let features: Vec<ShFeatures> = target.iter().map(|s| s.features).collect();
    let mut sum = 0.0;
    let mut n = 0usize;
    for cam in cameras {
        let plan = RenderPlan::build(target, cam);
        let img = plan.render(&features).expect("features match plan");
        for (c, &a) in img.rgb.iter().zip(plan.alpha()) {
            if a > OPAQUE {
                sum += palette.matched_distance(c);
                n += 1;
            }
        }
    }
    if n > 0 {
        sum / n as f64
    } else {
        0.0
    }
}
