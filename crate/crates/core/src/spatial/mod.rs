//! Spatial queries over splat centers: k-NN, outlier rejection, boundary
//! identification between two placed fields and interactive selection.

mod boundary;
mod kdtree;
mod outliers;
mod selection;

pub use boundary::{identify_boundary, BoundarySet};
pub use kdtree::{KdIndex, KnnError, Neighbor};
pub use outliers::{discard_outliers, OutlierReport};
pub use selection::{extract_selection, select_box, select_brush, BrushMode, OrientedBox, SelectionError};

/// Neighbor count used for boundary tests and clone-target lookup.
pub const DEFAULT_K: usize = 8;
pub const DEFAULT_OUTLIER_K: usize = 16;
pub const DEFAULT_OUTLIER_STD_RATIO: f64 = 3.0;
