use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kdtree::{KdIndex, KnnError};
use crate::splat::{composite_scene_size, GaussianField, ShFeatures};

/// Target splats that sit inside the intersection region with the source,
/// together with the source-derived features they are pulled toward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySet {
    /// Target splat indices, ascending.
    pub indices: Vec<usize>,
    /// Mean of the K source neighbors' (global-space) features, per member.
    pub target_features: Vec<ShFeatures>,
    pub mean_neighbor_distance: Vec<f64>,
    /// Absolute distance threshold used, `beta_factor * scene_size`.
    pub beta: f64,
    /// Bounding-box diagonal of the composite.
    pub scene_size: f64,
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn mean_distance(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.mean_neighbor_distance.iter().sum::<f64>() / self.len() as f64
        }
    }

    /// Membership mask over `n` target splats.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in &self.indices {
            m[i] = true;
        }
        m
    }
}

/// A target splat `a` joins the boundary when the mean distance to its `k`
/// nearest source splats is below `beta_factor * L` (L the composite's
/// bounding-box diagonal) and its opacity exceeds `tau`. Both fields are
/// evaluated in global space.
pub fn identify_boundary(
    target: &GaussianField,
    source: &GaussianField,
    k: usize,
    tau: f64,
    beta_factor: f64,
) -> Result<BoundarySet, KnnError> {
    if source.is_empty() {
        return Err(KnnError::Empty);
    }
    let target = target.baked();
    let source = source.baked();
    let scene_size = composite_scene_size(&[&target, &source]);
    let beta = beta_factor * scene_size;
    let index = KdIndex::build(source.positions().copied().collect());

    let hits: Vec<Option<(usize, ShFeatures, f64)>> = target
        .splats
        .par_iter()
        .enumerate()
        .map(|(i, a)| -> Result<_, KnnError> {
            if a.opacity <= tau {
                return Ok(None);
            }
            let nn = index.knn(&a.position, k)?;
            let mean = nn.iter().map(|n| n.distance).sum::<f64>() / nn.len() as f64;
            if mean >= beta {
                return Ok(None);
            }
            let mut f = ShFeatures::zeros();
            for n in &nn {
                f += source.splats[n.index].features;
            }
            Ok(Some((i, f * (1.0 / nn.len() as f64), mean)))
        })
        .collect::<Result<_, _>>()?;

    let mut out = BoundarySet {
        indices: Vec::new(),
        target_features: Vec::new(),
        mean_neighbor_distance: Vec::new(),
        beta,
        scene_size,
    };
    for (i, f, d) in hits.into_iter().flatten() {
        out.indices.push(i);
        out.target_features.push(f);
        out.mean_neighbor_distance.push(d);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::GaussianSplat;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cluster(rng: &mut impl Rng, center: Vector3<f64>, n: usize, r: f64, rgb: [f64; 3]) -> GaussianField {
        GaussianField::new(
            (0..n)
                .map(|_| {
                    let p = center
                        + Vector3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r));
                    GaussianSplat::isotropic(p, 0.01, 0.99, rgb)
                })
                .collect(),
        )
    }

    #[test]
    fn opaque_point_in_dense_source_is_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut source = cluster(&mut rng, Vector3::zeros(), 50, 0.01, [1.0, 0.0, 0.0]);
        // a far point so that the composite has a meaningful size
        source.splats.push(GaussianSplat::isotropic(Vector3::new(1.0, 1.0, 1.0), 0.01, 0.99, [1.0, 0.0, 0.0]));
        let target = GaussianField::new(vec![GaussianSplat::isotropic(Vector3::zeros(), 0.01, 0.99, [0.0, 0.0, 1.0])]);
        let b = identify_boundary(&target, &source, 8, 0.95, 0.05).unwrap();
        assert_eq!(b.indices, vec![0]);
        let c = b.target_features[0].dc_color();
        assert!((c[0] - 1.0).abs() < 1e-9 && c[2].abs() < 1e-9);

        let mut dim = target.clone();
        dim.splats[0].opacity = 0.5;
        assert!(identify_boundary(&dim, &source, 8, 0.95, 0.05).unwrap().is_empty());
    }

    #[test]
    fn empty_source_is_error() {
        let target = GaussianField::new(vec![GaussianSplat::isotropic(Vector3::zeros(), 0.01, 0.99, [0.0; 3])]);
        assert!(identify_boundary(&target, &GaussianField::new(vec![]), 8, 0.95, 0.05).is_err());
    }

    #[test]
    fn membership_grows_with_beta_and_features_are_convex() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut source = cluster(&mut rng, Vector3::zeros(), 400, 0.5, [0.0; 3]);
        for s in source.splats.iter_mut() {
            s.features.flat_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let target = cluster(&mut rng, Vector3::new(0.6, 0.0, 0.0), 400, 0.5, [0.0; 3]);
        let mut prev: Vec<usize> = Vec::new();
        for bf in [0.01, 0.02, 0.04, 0.08, 0.16] {
            let b = identify_boundary(&target, &source, 8, 0.95, bf).unwrap();
            assert!(prev.iter().all(|i| b.indices.contains(i)));
            prev = b.indices.clone();
        }
        let b = identify_boundary(&target, &source, 8, 0.95, 0.08).unwrap();
        let index = KdIndex::build(source.positions().copied().collect());
        for (slot, &i) in b.indices.iter().enumerate() {
            let nn = index.knn(&target.splats[i].position, 8).unwrap();
            for k in 0..ShFeatures::LEN {
                let vals: Vec<f64> = nn.iter().map(|n| source.splats[n.index].features.flat()[k]).collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let v = b.target_features[slot].flat()[k];
                assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
    }
}
