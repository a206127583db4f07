use rayon::prelude::*;

use super::kdtree::KdIndex;
use crate::splat::GaussianField;

#[derive(Debug, Clone)]
pub struct OutlierReport {
    pub field: GaussianField,
    /// Indices (into the input) of removed splats, ascending.
    pub removed: Vec<usize>,
    pub threshold: f64,
}

/// Statistical outlier filter: drops splats whose mean distance to their `k`
/// nearest same-field neighbors exceeds `mean + std_ratio * std` of that
/// statistic over the field. Fields with at most `k` splats are returned as is.
pub fn discard_outliers(field: &GaussianField, k: usize, std_ratio: f64) -> OutlierReport {
    let n = field.len();
    if n <= k || k == 0 {
        return OutlierReport { field: field.clone(), removed: Vec::new(), threshold: f64::INFINITY };
    }
    let positions: Vec<_> = field.positions().copied().collect();
    let index = KdIndex::build(positions.clone());
    let mean_dist: Vec<f64> = positions
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = index.knn(p, k + 1).expect("non-empty index");
            let mut sum = 0.0;
            let mut used = 0;
            for nb in nn.iter().filter(|nb| nb.index != i).take(k) {
                sum += nb.distance;
                used += 1;
            }
            sum / used as f64
        })
        .collect();
    let mean = mean_dist.iter().sum::<f64>() / n as f64;
    let var = mean_dist.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let threshold = mean + std_ratio * var.sqrt();

    let mut kept = Vec::with_capacity(n);
    let mut selection = Vec::with_capacity(n);
    let mut removed = Vec::new();
    for (i, d) in mean_dist.iter().enumerate() {
        if *d > threshold {
            removed.push(i);
        } else {
            kept.push(field.splats[i].clone());
            selection.push(field.selection[i]);
        }
    }
    let out = GaussianField { splats: kept, local_to_global: field.local_to_global, role: field.role, selection };
    OutlierReport { field: out, removed, threshold }
}
