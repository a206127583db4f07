//! Seamless stitching of 3D Gaussian splatting fields.
//!
//! Parts segmented from several pre-trained fields are placed into one
//! composite with rigid transforms, the intersection boundary is found by
//! nearest-neighbour analysis, and the target part's SH appearance is then
//! optimized so that the seam disappears while its own content survives:
//!
//! * a sampling-based cloning phase (boundary feature loss, propagated
//!   per-view color targets and screen-space gradient preservation), and
//! * a clustering-based tuning phase that pulls rendered colors toward a
//!   streamed palette of the source field.
//!
//! Geometry stays frozen throughout, which makes every rendered image linear
//! in the SH coefficients and lets all gradients be computed analytically.

pub mod fixtures;
pub mod optimize;
pub mod ply;
pub mod render;
pub mod sh;
pub mod spatial;
pub mod splat;
pub mod transform;

pub use splat::{FieldRole, GaussianField, GaussianSplat, RigidTransform, ShFeatures};
