#![allow(dead_code)]

use gsstitch_core::fixtures::{two_cube, TwoCubeSpec};
use gsstitch_core::ply;
use gsstitch_core::splat::RigidTransform;
use serde_json::{json, Value};

/// Small two-cube scene: source PLY, target PLY in its local frame, and the
/// target's local-to-global transform.
pub struct Scene {
    pub source: Vec<u8>,
    pub target: Vec<u8>,
    pub transform: RigidTransform,
}

pub fn scene() -> Scene {
    let f = two_cube(&TwoCubeSpec { per_edge: 6, ..Default::default() });
    Scene {
        source: ply::to_ply_bytes(&f.source, true).unwrap(),
        target: ply::to_ply_bytes(&f.target, false).unwrap(),
        transform: f.target.local_to_global,
    }
}

/// Fast optimizer settings for the small scene.
pub fn small_config(iters: usize) -> Value {
    json!({
        "totalIters": iters,
        "betaFactor": 0.15,
        "lossResolution": 32,
        "gradViews": 3,
        "tuneViews": 2,
        "camerasPerIter": 2,
        "palette": {"maxIters": 15}
    })
}
