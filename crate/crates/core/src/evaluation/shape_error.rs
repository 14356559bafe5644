//! Landmark error normalised by face width.

use crate::error::{Error, Result};
use crate::features::shape::{Shape4, LANDMARKS};
use crate::funnel::detect::BoxF;

/// Mean landmark distance divided by the face width, for shapes given in
/// box-normalised coordinates of a `width x height` face.
pub fn face_shape_error(pred: &Shape4, truth: &Shape4, width: f64, height: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..LANDMARKS {
        let (a, b) = (pred.point(k), truth.point(k));
        total += ((a.0 - b.0) * width).hypot((a.1 - b.1) * height);
    }
    total / LANDMARKS as f64 / width
}

/// Per-face errors and their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeErrorStats {
    /// Ascending.
    pub errors: Vec<f64>,
    pub mean: f64,
}

impl ShapeErrorStats {
    pub fn from_errors(mut errors: Vec<f64>) -> Self {
        errors.sort_by(f64::total_cmp);
        let mean = if errors.is_empty() {
            0.0
        } else {
            errors.iter().sum::<f64>() / errors.len() as f64
        };
        ShapeErrorStats { errors, mean }
    }

    /// Fraction of faces with error at most `e`.
    pub fn cdf(&self, e: f64) -> f64 {
        if self.errors.is_empty() {
            return 0.0;
        }
        self.errors.partition_point(|&x| x <= e) as f64 / self.errors.len() as f64
    }

    /// `(error, fraction)` at each step of the empirical CDF.
    pub fn cdf_points(&self) -> Vec<(f64, f64)> {
        let n = self.errors.len() as f64;
        self.errors
            .iter()
            .enumerate()
            .map(|(i, &e)| (e, (i + 1) as f64 / n))
            .collect()
    }
}

/// Errors of paired predictions against truths, each on face box `boxes[i]`.
pub fn shape_error(pred: &[Shape4], truth: &[Shape4], boxes: &[BoxF]) -> Result<ShapeErrorStats> {
    if pred.len() != truth.len() || pred.len() != boxes.len() {
        return Err(Error::input(format!(
            "shape error needs paired inputs, got {} predictions, {} truths, {} boxes",
            pred.len(),
            truth.len(),
            boxes.len()
        )));
    }
    Ok(ShapeErrorStats::from_errors(
        pred.iter()
            .zip(truth)
            .zip(boxes)
            .map(|((p, t), b)| face_shape_error(p, t, b.width, b.height))
            .collect(),
    ))
}
