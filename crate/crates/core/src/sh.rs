//! Real spherical-harmonics basis up to degree 3, in the sign convention used
//! by 3DGS exporters (Condon-Shortley phase included).

use nalgebra::Vector3;

use crate::splat::{ShFeatures, SH_C0, SH_COEFFS};

const C1: f64 = 0.4886025119029199;
const C2: [f64; 5] = [
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
];
const C3: [f64; 7] = [
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
];

/// Tolerance on `|d| - 1` accepted by the checked evaluators.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("view direction must be unit length (norm {0})")]
pub struct NonUnitDirection(pub f64);

/// All 16 basis functions evaluated at `d`. No normalization is applied.
pub fn sh_basis(d: &Vector3<f64>) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        SH_C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * xy,
        C2[1] * yz,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * xz,
        C2[4] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * xy * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * x * (4.0 * zz - xx - yy),
        C3[5] * z * (xx - yy),
        C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Color from a coefficient block and a precomputed basis, `0.5 + <f, Y>` per
/// channel. Unclamped.
#[inline]
pub fn eval_with_basis(features: &ShFeatures, basis: &[f64; SH_COEFFS]) -> [f64; 3] {
    let mut out = [0.5; 3];
    for (c, o) in out.iter_mut().enumerate() {
        *o += features.0[c].iter().zip(basis).map(|(f, y)| f * y).sum::<f64>();
    }
    out
}

/// Evaluates the view-dependent color of `features` seen along `direction`.
pub fn sh_eval(features: &ShFeatures, direction: &Vector3<f64>) -> Result<[f64; 3], NonUnitDirection> {
    let n = direction.norm();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(NonUnitDirection(n));
    }
    Ok(eval_with_basis(features, &sh_basis(direction)))
}
