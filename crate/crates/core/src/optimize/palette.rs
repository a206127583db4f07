use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PaletteConfig;
use crate::render::{Camera, RenderPlan};
use crate::splat::GaussianField;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PaletteError {
    #[error("source renders fully transparent from every camera")]
    Transparent,
    #[error("palette centers and weights differ in length")]
    Shape,
}

/// Clustered source colors with their sample shares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub centers: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

#[inline]
fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Palette {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self) -> Result<(), PaletteError> {
        if self.centers.len() != self.weights.len() {
            return Err(PaletteError::Shape);
        }
        Ok(())
    }

    /// Index minimizing `|c - c_i| - w_i`; ties go to the lower index.
    pub fn match_color(&self, c: &[f64; 3]) -> usize {
        let mut best = 0;
        let mut best_score = f64::INFINITY;
        for (i, (center, w)) in self.centers.iter().zip(&self.weights).enumerate() {
            let score = dist(c, center) - w;
            if score < best_score {
                best = i;
                best_score = score;
            }
        }
        best
    }

    /// Euclidean distance from `c` to its matched center.
    pub fn matched_distance(&self, c: &[f64; 3]) -> f64 {
        dist(c, &self.centers[self.match_color(c)])
    }
}

#[derive(Debug, Clone)]
struct Bin {
    center: [f64; 3],
    born: usize,
    total_votes: u64,
    window: VecDeque<u64>,
}

/// Outcome of streaming aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct PaletteReport {
    pub palette: Palette,
    pub iterations: usize,
    pub converged: bool,
}

/// k-means++ seeding. Only samples farther than `min_separation` from every
/// chosen seed are candidates, so seeding never creates a bin that the spawn
/// rule would not.
fn kmeans_pp(samples: &[[f64; 3]], k: usize, min_separation: f64, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut d2: Vec<f64> = samples.iter().map(|s| dist(s, &centers[0]).powi(2)).collect();
    let floor = min_separation * min_separation;
    while centers.len() < k {
        d2.iter_mut().filter(|d| **d <= floor).for_each(|d| *d = 0.0);
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = samples.len() - 1;
        for (i, d) in d2.iter().enumerate() {
            if r < *d {
                pick = i;
                break;
            }
            r -= d;
        }
        let c = samples[pick];
        for (d, s) in d2.iter_mut().zip(samples) {
            *d = d.min(dist(s, &c).powi(2));
        }
        centers.push(c);
    }
    centers
}

/// Streaming color clustering over renders of `source` (global space) from
/// the given cameras, one camera per iteration.
///
/// Each iteration collects the clamped colors of pixels with alpha above the
/// threshold, assigns every sample to its nearest bin (spawning a new bin for
/// samples farther than the spawn distance from all centers), then moves each
/// bin halfway toward the mean of its new samples. Bins older than the window
/// that drew less than the expiry share of the window's samples are
/// dropped. Aggregation stops once every center moved less than the
/// tolerance for the configured streak (and at least one full window has
/// passed), when cameras run out, or at the iteration cap.
pub fn aggregate_palette(
    source: &GaussianField,
    cameras: impl IntoIterator<Item = Camera>,
    seed: u64,
    config: &PaletteConfig,
) -> Result<PaletteReport, PaletteError> {
    let source = source.baked();
    let features = source.features();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bins: Vec<Bin> = Vec::new();
    let mut window_samples: VecDeque<u64> = VecDeque::new();
    let mut streak = 0;
    let mut iterations = 0;
    let mut converged = false;

    for (iter, cam) in cameras.into_iter().take(config.max_iters).enumerate() {
        iterations = iter + 1;
        let plan = RenderPlan::build(&source.splats, &cam);
        let img = plan.render(&features).expect("plan built from the same field");
        let samples: Vec<[f64; 3]> = img
            .rgb
            .iter()
            .zip(plan.alpha())
            .filter(|(_, &a)| a > config.alpha_threshold)
            .map(|(c, _)| *c)
            .collect();

        if bins.is_empty() {
            if samples.is_empty() {
                continue;
            }
            for c in kmeans_pp(&samples, config.initial_bins, config.spawn_distance, &mut rng) {
                bins.push(Bin { center: c, born: iter, total_votes: 0, window: VecDeque::new() });
            }
        }

        let mut sums: Vec<([f64; 3], u64)> = vec![([0.0; 3], 0); bins.len()];
        for s in &samples {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (i, b) in bins.iter().enumerate() {
                let d = dist(s, &b.center);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            if best_d > config.spawn_distance {
                bins.push(Bin { center: *s, born: iter, total_votes: 0, window: VecDeque::new() });
                sums.push(([0.0; 3], 0));
                best = bins.len() - 1;
            }
            let acc = &mut sums[best];
            for c in 0..3 {
                acc.0[c] += s[c];
            }
            acc.1 += 1;
        }

        let mut max_move: f64 = 0.0;
        for (b, (sum, n)) in bins.iter_mut().zip(&sums) {
            if *n > 0 {
                let inv = 1.0 / *n as f64;
                let next = [0, 1, 2].map(|c| 0.5 * (b.center[c] + sum[c] * inv));
                max_move = max_move.max(dist(&next, &b.center));
                b.center = next;
            }
            b.total_votes += n;
            b.window.push_back(*n);
            if b.window.len() > config.expiry_window {
                b.window.pop_front();
            }
        }
        window_samples.push_back(samples.len() as u64);
        if window_samples.len() > config.expiry_window {
            window_samples.pop_front();
        }
        let window_total: u64 = window_samples.iter().sum();
        let before = bins.len();
        bins.retain(|b| {
            let age = iter + 1 - b.born;
            let votes: u64 = b.window.iter().sum();
            age < config.expiry_window || votes as f64 >= config.expiry_share * window_total as f64
        });
        if bins.len() != before {
            log::debug!("palette: {} bins expired at iteration {iter}", before - bins.len());
        }

        streak = if max_move < config.convergence_tolerance { streak + 1 } else { 0 };
        if streak >= config.convergence_streak && iterations >= config.expiry_window {
            converged = true;
            break;
        }
    }

    if bins.is_empty() {
        return Err(PaletteError::Transparent);
    }
    let total: u64 = bins.iter().map(|b| b.total_votes).sum();
    if total == 0 {
        return Err(PaletteError::Transparent);
    }
    let mut keep: Vec<&Bin> =
        bins.iter().filter(|b| b.total_votes as f64 >= config.min_final_share * total as f64).collect();
    if keep.is_empty() {
        keep.push(bins.iter().max_by_key(|b| b.total_votes).expect("non-empty"));
    }
    let kept_total: u64 = keep.iter().map(|b| b.total_votes).sum();
    let palette = Palette {
        centers: keep.iter().map(|b| b.center.map(|v| v.clamp(0.0, 1.0))).collect(),
        weights: keep.iter().map(|b| b.total_votes as f64 / kept_total as f64).collect(),
    };
    Ok(PaletteReport { palette, iterations, converged })
}
