//! Four-landmark face shapes and the features indexed by them.

use serde::{Deserialize, Serialize};

use super::sift::{sift_descriptor_into, DEFAULT_SIFT_RADIUS, SIFT_DIM};
use crate::error::{Error, Result};
use crate::imaging::{GrayImage, WindowRect};

pub const LANDMARKS: usize = 4;
/// Shape dimension (two coordinates per landmark).
pub const SHAPE_DIM: usize = 2 * LANDMARKS;
pub const SHAPE_FEATURE_DIM: usize = LANDMARKS * SIFT_DIM;

pub const LEFT_EYE: usize = 0;
pub const RIGHT_EYE: usize = 1;
pub const NOSE: usize = 2;
pub const MOUTH: usize = 3;

/// Landmarks (left eye, right eye, nose tip, mouth centre) as `(u, v)`
/// pairs normalised to the window, flattened to `[u0, v0, .., u3, v3]`.
///
/// Profiles carry the invisible eye at the visible eye's position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape4(pub [f64; SHAPE_DIM]);

impl Shape4 {
    pub fn from_points(points: [(f64, f64); LANDMARKS]) -> Self {
        let mut s = [0.0; SHAPE_DIM];
        for (k, (u, v)) in points.iter().enumerate() {
            s[2 * k] = *u;
            s[2 * k + 1] = *v;
        }
        Shape4(s)
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; SHAPE_DIM] = values
            .try_into()
            .map_err(|_| Error::input(format!("a shape has {SHAPE_DIM} values, got {}", values.len())))?;
        let shape = Shape4(arr);
        if !shape.is_finite() {
            return Err(Error::input("shape coordinates must be finite"));
        }
        Ok(shape)
    }

    #[inline]
    pub fn point(&self, k: usize) -> (f64, f64) {
        (self.0[2 * k], self.0[2 * k + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn clamped(&self) -> Shape4 {
        Shape4(self.0.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn in_unit_square(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Horizontal mirror about `u = 0.5`; the eyes swap roles.
    pub fn mirrored(&self) -> Shape4 {
        let mut pts = [(0.0, 0.0); LANDMARKS];
        for (k, p) in pts.iter_mut().enumerate() {
            let (u, v) = self.point(k);
            *p = (1.0 - u, v);
        }
        pts.swap(LEFT_EYE, RIGHT_EYE);
        Shape4::from_points(pts)
    }

    /// Mean Euclidean landmark distance, in normalised units.
    pub fn mean_distance(&self, other: &Shape4) -> f64 {
        (0..LANDMARKS)
            .map(|k| {
                let (a, b) = (self.point(k), other.point(k));
                ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
            })
            .sum::<f64>()
            / LANDMARKS as f64
    }
}

/// SIFT at the four (clamped) landmarks of `shape` inside `window`,
/// concatenated in landmark order into `out[..512]`.
pub fn shape_indexed_features_into(img: &GrayImage, window: &WindowRect, shape: &Shape4, out: &mut [f64]) {
    let shape = shape.clamped();
    for (k, chunk) in out[..SHAPE_FEATURE_DIM].chunks_exact_mut(SIFT_DIM).enumerate() {
        sift_descriptor_into(img, window, shape.point(k), DEFAULT_SIFT_RADIUS, chunk);
    }
}

/// Shape-indexed feature vector of a canonical window raster.
pub fn shape_indexed_features(img: &GrayImage, shape: &Shape4) -> Vec<f64> {
    let window = WindowRect {
        x: 0,
        y: 0,
        width: img.width(),
        height: img.height(),
        scale_index: 0,
    };
    let mut out = vec![0.0; SHAPE_FEATURE_DIM];
    shape_indexed_features_into(img, &window, shape, &mut out);
    out
}
