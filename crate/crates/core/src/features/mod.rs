//! Descriptor families: LAB codes, SURF patches and shape-indexed SIFT.

pub mod lab;
pub mod shape;
pub mod sift;
pub mod surf;

pub use lab::{all_locators, compute_lab_map, lab_code_at, LabFeatureLocator, LabFeatureMap, DEFAULT_BLOCK_SIZES};
pub use shape::{shape_indexed_features, shape_indexed_features_into, Shape4, SHAPE_DIM, SHAPE_FEATURE_DIM};
pub use sift::{sift_descriptor, sift_descriptor_into, DEFAULT_SIFT_RADIUS, SIFT_DIM};
pub use surf::{default_pool_hash, default_surf_pool, pool_hash, surf_descriptor, SurfPatch, SURF_DIM, SURF_POOL_SIZE};
