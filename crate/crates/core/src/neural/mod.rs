//! Multilayer perceptrons: evaluation, backpropagation, training and
//! group-sparse feature selection.

pub mod group_select;
pub mod mlp;
pub mod train;

pub use group_select::{select_feature_groups, GroupSparseConfig};
pub use mlp::{gradient, loss, sigmoid, Activations, Example, Gradients, Head, Layer, MlpModel, Objective};
pub use train::{fit, train_joint_mlp, train_mlp, TrainConfig, TrainLog, DEFAULT_LAMBDA};
