//! Random geometric distortions of face samples.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::shape::{Shape4, LANDMARKS, LEFT_EYE, RIGHT_EYE};
use crate::imaging::{round_u8, GrayImage, Rect, WINDOW_SIZE};
use crate::training::dataset::PositiveRecord;
use crate::training::views::ViewScheme;

/// A 40x40 training window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub raster: GrayImage,
    pub face: bool,
    /// View id; faces only.
    pub view: Option<usize>,
    pub yaw: Option<f64>,
    /// Landmarks normalised to the window; faces only.
    pub shape: Option<Shape4>,
    pub source: String,
}

/// Maximum distortion magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentBounds {
    pub rotation_deg: f64,
    /// Relative scale change, e.g. 0.1 for ±10%.
    pub scale: f64,
    /// Shift as a fraction of the window side.
    pub translation: f64,
    pub mirror: bool,
}

impl Default for AugmentBounds {
    fn default() -> Self {
        AugmentBounds {
            rotation_deg: 15.0,
            scale: 0.1,
            translation: 0.05,
            mirror: true,
        }
    }
}

/// One similarity transform of the window, optionally preceded by a
/// horizontal mirror. In normalised window coordinates a point `q` maps to
/// `c + s R(θ) (m(q) - c) + t` with `c = (0.5, 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Distortion {
    pub rotation_deg: f64,
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
    pub mirror: bool,
}

impl Distortion {
    pub const IDENTITY: Distortion = Distortion {
        rotation_deg: 0.0,
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
        mirror: false,
    };

    pub fn random(bounds: &AugmentBounds, rng: &mut impl Rng) -> Self {
        let sym = |rng: &mut dyn rand::RngCore, b: f64| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 };
        Distortion {
            rotation_deg: sym(rng, bounds.rotation_deg),
            scale: 1.0 + sym(rng, bounds.scale),
            tx: sym(rng, bounds.translation),
            ty: sym(rng, bounds.translation),
            mirror: bounds.mirror && rng.gen_bool(0.5),
        }
    }

    /// Image of a normalised point.
    pub fn apply(&self, (u, v): (f64, f64)) -> (f64, f64) {
        let u = if self.mirror { 1.0 - u } else { u };
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = (u - 0.5, v - 0.5);
        (
            0.5 + self.scale * (c * dx - s * dy) + self.tx,
            0.5 + self.scale * (s * dx + c * dy) + self.ty,
        )
    }

    /// Pre-image of a normalised point.
    pub fn invert(&self, (u, v): (f64, f64)) -> (f64, f64) {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let (dx, dy) = ((u - 0.5 - self.tx) / self.scale, (v - 0.5 - self.ty) / self.scale);
        let q = (0.5 + c * dx + s * dy, 0.5 - s * dx + c * dy);
        if self.mirror {
            (1.0 - q.0, q.1)
        } else {
            q
        }
    }

    /// Landmarks after the transform; a mirror swaps the eye labels.
    pub fn apply_shape(&self, shape: &Shape4) -> Shape4 {
        let mut pts = [(0.0, 0.0); LANDMARKS];
        for (k, p) in pts.iter_mut().enumerate() {
            *p = self.apply(shape.point(k));
        }
        if self.mirror {
            pts.swap(LEFT_EYE, RIGHT_EYE);
        }
        Shape4::from_points(pts)
    }
}

/// Resamples the face box `rect` of `image` into a 40x40 window under `d`.
/// The identity reproduces a 40x40 box exactly.
pub fn distort(image: &GrayImage, rect: &Rect, d: &Distortion) -> GrayImage {
    let n = WINDOW_SIZE as f64;
    GrayImage::from_fn(WINDOW_SIZE, WINDOW_SIZE, |i, j| {
        let (u, v) = d.invert(((i as f64 + 0.5) / n, (j as f64 + 0.5) / n));
        let x = rect.x as f64 + u * rect.width as f64;
        let y = rect.y as f64 + v * rect.height as f64;
        round_u8(image.sample_bilinear(x, y))
    })
    .expect("window size is positive")
}

/// Builds the window for one face under one distortion.
pub fn distorted_sample(rec: &PositiveRecord, d: &Distortion, scheme: &ViewScheme) -> Result<TrainSample> {
    let yaw = if d.mirror { -rec.yaw } else { rec.yaw };
    Ok(TrainSample {
        raster: distort(&rec.image, &rec.rect, d),
        face: true,
        view: Some(scheme.view_of(yaw)?),
        yaw: Some(yaw),
        shape: rec.shape.map(|s| d.apply_shape(&s).clamped()),
        source: rec.source.clone(),
    })
}

/// Returns `factor` windows per face: the undistorted one followed by
/// `factor - 1` random variants.
pub fn augment(
    records: &[PositiveRecord],
    scheme: &ViewScheme,
    factor: usize,
    bounds: &AugmentBounds,
    seed: u64,
) -> Result<Vec<TrainSample>> {
    if factor == 0 {
        return Err(Error::config("augmentation factor must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(records.len() * factor);
    for rec in records {
        out.push(distorted_sample(rec, &Distortion::IDENTITY, scheme)?);
        for _ in 1..factor {
            let d = Distortion::random(bounds, &mut rng);
            out.push(distorted_sample(rec, &d, scheme)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn record(yaw: f64) -> PositiveRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(yaw.abs() as u64);
        let image = GrayImage::from_fn(60, 60, |_, _| rng.gen()).unwrap();
        PositiveRecord {
            image: Arc::new(image),
            rect: Rect::new(10, 10, 40, 40),
            yaw,
            shape: Some(Shape4::from_points([(0.45, 0.4), (0.75, 0.4), (0.62, 0.58), (0.58, 0.76)])),
            source: "t".into(),
        }
    }

    #[test]
    fn identity_reproduces_original() {
        let rec = record(0.0);
        let s = distorted_sample(&rec, &Distortion::IDENTITY, &ViewScheme::Five).unwrap();
        assert_eq!(s.raster, rec.image.crop(rec.rect).unwrap());
        assert_eq!(s.shape, rec.shape);
    }

    #[test]
    fn mirror_flips_view_and_swaps_eyes() {
        let rec = record(-40.0);
        let d = Distortion {
            mirror: true,
            ..Distortion::IDENTITY
        };
        let s = distorted_sample(&rec, &d, &ViewScheme::Five).unwrap();
        assert_eq!(ViewScheme::Five.view_of(rec.yaw).unwrap(), 1);
        assert_eq!(s.view, Some(3));
        let orig = rec.shape.unwrap();
        let m = s.shape.unwrap();
        assert!((m.point(LEFT_EYE).0 - (1.0 - orig.point(RIGHT_EYE).0)).abs() < 1e-12);
        assert_eq!(m, orig.mirrored());
        // Pixels are mirrored too.
        let crop = rec.image.crop(rec.rect).unwrap();
        for y in 0..40 {
            for x in 0..40 {
                assert_eq!(s.raster.get(x, y), crop.get(39 - x, y));
            }
        }
    }

    #[test]
    fn landmarks_follow_the_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let shape = record(0.0).shape.unwrap();
        for _ in 0..200 {
            let d = Distortion::random(&AugmentBounds::default(), &mut rng);
            let out = d.apply_shape(&shape);
            // Independent matrix form of the same transform.
            let th = d.rotation_deg.to_radians();
            let m = [[d.scale * th.cos(), -d.scale * th.sin()], [d.scale * th.sin(), d.scale * th.cos()]];
            for k in 0..LANDMARKS {
                let src = if d.mirror && k == LEFT_EYE {
                    RIGHT_EYE
                } else if d.mirror && k == RIGHT_EYE {
                    LEFT_EYE
                } else {
                    k
                };
                let (mut u, v) = shape.point(src);
                if d.mirror {
                    u = 1.0 - u;
                }
                let e = (
                    0.5 + m[0][0] * (u - 0.5) + m[0][1] * (v - 0.5) + d.tx,
                    0.5 + m[1][0] * (u - 0.5) + m[1][1] * (v - 0.5) + d.ty,
                );
                let got = out.point(k);
                assert!((got.0 - e.0).abs() < 1e-9 && (got.1 - e.1).abs() < 1e-9);
                let back = d.invert(got);
                let orig = shape.point(src);
                assert!((back.0 - orig.0).abs() < 1e-9 && (back.1 - orig.1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn output_count_and_determinism() {
        let recs = vec![record(10.0), record(-70.0), record(50.0)];
        let a = augment(&recs, &ViewScheme::Five, 4, &AugmentBounds::default(), 3).unwrap();
        let b = augment(&recs, &ViewScheme::Five, 4, &AugmentBounds::default(), 3).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a, b);
        assert!(augment(&recs, &ViewScheme::Five, 0, &AugmentBounds::default(), 3).is_err());
    }
}
