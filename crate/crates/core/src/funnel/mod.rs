//! The funnel: per-view LAB cascades feeding coarse SURF-MLP branches,
//! gathered into one fine shape-indexed MLP cascade.

pub mod detect;
pub mod model;
pub mod scan;

pub use detect::{detect, nms, scan_image, to_detection, BoxF, DetectOutput, DetectParams, Detection};
pub use model::{
    load_model, save_model, CoarseBranch, FunnelModel, FunnelTopology, TrainingMetadata, ViewInfo, FORMAT_VERSION,
};
pub use scan::{CascadeView, ScanResult, StageCounters, StageTimings, Survivor};
