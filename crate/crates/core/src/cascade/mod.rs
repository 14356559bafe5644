//! Stage classifiers: per-view boosted LAB cascades, their union, and
//! MLP verification stages.

pub mod lab;
pub mod mlp_stage;
pub mod union;

pub use lab::{
    calibrate_threshold, classify_lab, train_lab_stage, LabCascadeModel, LabDecision, LabTrainConfig,
    LabTrainReport, LabWeakClassifier, DEFAULT_WEAK_COUNT,
};
pub use mlp_stage::{verify_mlp_stage, FeatureSource, FeatureSpec, MlpStage, StageOutput};
pub use union::{accepting_views, union_propose, Proposal, ViewSet};
