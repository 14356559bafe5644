//! Threshold-gated MLP verification stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::shape::{shape_indexed_features_into, Shape4, SHAPE_FEATURE_DIM};
use crate::features::surf::{surf_group_features, SurfPatch, SURF_DIM};
use crate::imaging::{GrayImage, IntegralImage, WindowRect};
use crate::neural::{Activations, Head, MlpModel};

/// What a stage feeds its network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    /// Concatenated SURF descriptors of the listed pool patches.
    Surf { groups: Vec<usize> },
    /// SIFT at the four landmarks of the current shape estimate.
    ShapeIndexed,
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSpec::Surf { groups } => groups.len() * SURF_DIM,
            FeatureSpec::ShapeIndexed => SHAPE_FEATURE_DIM,
        }
    }
}

/// Image data a window's features are read from.
#[derive(Clone, Copy)]
pub struct FeatureSource<'a> {
    pub image: &'a GrayImage,
    pub integral: &'a IntegralImage,
    pub pool: &'a [SurfPatch],
}

impl FeatureSource<'_> {
    /// Writes the features of `window` for `spec` into `out`. `shape` is
    /// only read by shape-indexed specs.
    pub fn extract(&self, spec: &FeatureSpec, window: &WindowRect, shape: &Shape4, out: &mut Vec<f64>) {
        match spec {
            FeatureSpec::Surf { groups } => surf_group_features(self.integral, window, self.pool, groups, out),
            FeatureSpec::ShapeIndexed => {
                out.clear();
                out.resize(SHAPE_FEATURE_DIM, 0.0);
                shape_indexed_features_into(self.image, window, shape, out);
            }
        }
    }
}

/// One verification stage: accept iff the class output reaches `threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpStage {
    pub features: FeatureSpec,
    pub threshold: f64,
    pub model: MlpModel,
}

/// Result of one stage on one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageOutput {
    pub accept: bool,
    pub score: f64,
    /// Refined shape from a joint head.
    pub shape: Option<Shape4>,
}

impl MlpStage {
    pub fn validate(&self, pool_size: usize) -> Result<()> {
        self.model.validate()?;
        if self.features.dim() != self.model.input_dim() {
            return Err(Error::input(format!(
                "stage features have {} dims but the network expects {}",
                self.features.dim(),
                self.model.input_dim()
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::input(format!("stage threshold {} outside [0, 1]", self.threshold)));
        }
        if let FeatureSpec::Surf { groups } = &self.features {
            if groups.is_empty() {
                return Err(Error::input("SURF stage selects no groups"));
            }
            if let Some(&g) = groups.iter().find(|&&g| g >= pool_size) {
                return Err(Error::input(format!("SURF group {g} outside pool of {pool_size}")));
            }
        }
        Ok(())
    }

    /// Evaluates prepared features; `features` must have the input dimension.
    pub fn verify_with(&self, features: &[f64], acts: &mut Activations) -> StageOutput {
        let out = self.model.forward_with(features, acts);
        let score = out[0];
        let shape = match self.model.head() {
            Head::Joint => {
                let mut s = [0.0; 8];
                s.copy_from_slice(&out[1..9]);
                Some(Shape4(s))
            }
            Head::Plain => None,
        };
        StageOutput {
            accept: score >= self.threshold,
            score,
            shape,
        }
    }
}

/// Runs `stage` on a feature vector, checking its dimension.
pub fn verify_mlp_stage(stage: &MlpStage, features: &[f64]) -> Result<StageOutput> {
    if features.len() != stage.model.input_dim() {
        return Err(Error::input(format!(
            "stage expects {} features, got {}",
            stage.model.input_dim(),
            features.len()
        )));
    }
    Ok(stage.verify_with(features, &mut Activations::default()))
}
