//! Toy BEV perception: encoder, detection head, task loss and AP metric.

pub mod metric;
pub mod nets;
pub mod truth;

pub use metric::{components, detection_loss, detection_metric, Detection, IOU_THRESHOLDS};
pub use nets::{BevEncoder, DetectHead};
pub use truth::{BoxCells, DetectionTruth};

/// Spatial downsampling from the world grid to the feature grid.
pub const FEATURE_STRIDE: usize = 2;
