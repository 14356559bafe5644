//! Building a funnel from annotated images.

pub mod augment;
pub mod dataset;
pub mod mining;
pub mod pipeline;
pub mod views;

pub use augment::{augment, distort, AugmentBounds, Distortion, TrainSample};
pub use dataset::{load_dataset, parse_manifest, read_manifest, write_dataset, Dataset, ManifestEntry, PositiveRecord};
pub use mining::{mine_hard_negatives, MinedNegatives, MiningParams};
pub use pipeline::{derive_seed, mean_shape, train_funnel, FunnelTrainConfig, StageReport, TrainReport, DEFAULT_MEAN_SHAPE};
pub use views::{partition_views, ViewScheme};
