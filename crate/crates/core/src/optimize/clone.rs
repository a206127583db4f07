use nalgebra::Vector3;
use rayon::prelude::*;

use crate::spatial::{BoundarySet, KdIndex};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CloneError {
    #[error("no intersection region; adjust transforms or betaFactor")]
    EmptyBoundary,
    #[error("boundary refers to splat {0} outside the target")]
    BadIndex(usize),
}

/// Offset magnitude of the sampling disturbance at distance `delta_x` from
/// the seam: `beta * sin(gamma * delta_x / beta)`.
#[inline]
pub fn disturbance(delta_x: f64, gamma: f64, beta: f64) -> f64 {
    beta * (gamma * delta_x / beta).sin()
}

/// Pushes `position` along the direction away from `anchor` (its nearest
/// boundary point) by [`disturbance`]. Identity when the two coincide.
pub fn phi(position: &Vector3<f64>, anchor: &Vector3<f64>, gamma: f64, beta: f64) -> Vector3<f64> {
    let offset = position - anchor;
    let delta_x = offset.norm();
    if delta_x == 0.0 {
        return *position;
    }
    position + offset * (disturbance(delta_x, gamma, beta) / delta_x)
}

/// Sampling map from non-boundary target splats to the boundary splats that
/// drive their color. Geometry is frozen, so this is built once.
#[derive(Debug, Clone, PartialEq)]
pub struct CloneTargets {
    /// Non-boundary target splat indices, ascending.
    pub members: Vec<usize>,
    /// Target indices of the boundary set, in boundary order.
    pub boundary: Vec<usize>,
    /// `k` driven points per member, as positions into `boundary`.
    driven: Vec<u32>,
    pub k: usize,
    /// Distance from each member to its nearest boundary point.
    pub delta_x: Vec<f64>,
}

impl CloneTargets {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Positions into the boundary list driving member `m`.
    pub fn driven(&self, m: usize) -> &[u32] {
        &self.driven[m * self.k..(m + 1) * self.k]
    }

    /// Target indices driving member `m`.
    pub fn driven_targets(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        self.driven(m).iter().map(|&b| self.boundary[b as usize])
    }
}

/// For every target splat outside the boundary: finds its nearest boundary
/// point, disturbs its position with [`phi`], and takes the `k` nearest
/// boundary points to the disturbed position as its drivers. `positions`
/// are the target's global-space centers.
pub fn build_clone_targets(
    positions: &[Vector3<f64>],
    boundary: &BoundarySet,
    k: usize,
    gamma: f64,
) -> Result<CloneTargets, CloneError> {
    if boundary.is_empty() {
        return Err(CloneError::EmptyBoundary);
    }
    if let Some(&bad) = boundary.indices.iter().find(|&&i| i >= positions.len()) {
        return Err(CloneError::BadIndex(bad));
    }
    let k = k.clamp(1, boundary.len());
    let index = KdIndex::build(boundary.indices.iter().map(|&i| positions[i]).collect());
    let in_boundary = boundary.mask(positions.len());
    let members: Vec<usize> = (0..positions.len()).filter(|&i| !in_boundary[i]).collect();
    let beta = boundary.beta;

    let mapped: Vec<(f64, Vec<u32>)> = members
        .par_iter()
        .map(|&a| {
            let x = &positions[a];
            let nearest = index.nearest(x).expect("boundary is non-empty");
            let anchor = index.point(nearest.index);
            let q = phi(x, anchor, gamma, beta);
            let nn = index.knn(&q, k).expect("boundary is non-empty");
            (nearest.distance, nn.iter().map(|n| n.index as u32).collect())
        })
        .collect();

    let mut delta_x = Vec::with_capacity(members.len());
    let mut driven = Vec::with_capacity(members.len() * k);
    for (d, nn) in mapped {
        delta_x.push(d);
        driven.extend(nn);
    }
    Ok(CloneTargets { members, boundary: boundary.indices.clone(), driven, k, delta_x })
}
