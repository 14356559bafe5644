//! Procedural face-like patterns, background textures and scenes with known
//! boxes, yaw and landmarks.
//!
//! Faces are drawn from a small 3D layout (eyes, nose tip, mouth) rotated by
//! yaw and projected orthographically, then rolled in the image plane. Full
//! profiles (|yaw| > 60) show one eye and annotate both eyes at its position.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::shape::{Shape4, LANDMARKS, LEFT_EYE, MOUTH, NOSE, RIGHT_EYE};
use crate::imaging::{round_u8, GrayImage, Rect};
use crate::training::{Dataset, PositiveRecord};

/// Yaw beyond which only the near eye is visible.
pub const PROFILE_YAW: f64 = 60.0;

/// Appearance of one rendered face.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceStyle {
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub skin: f64,
    pub feature: f64,
    pub hair: Option<f64>,
    pub eye_spacing: f64,
    pub eye_height: f64,
    pub nose_height: f64,
    pub mouth_height: f64,
    pub mouth_width: f64,
    /// Linear shading across the face, intensity per face width.
    pub light: (f64, f64),
    pub noise: f64,
}

impl FaceStyle {
    /// Random appearance with the given yaw.
    pub fn random(yaw_deg: f64, rng: &mut impl Rng) -> Self {
        let skin = rng.gen_range(120.0..225.0);
        FaceStyle {
            yaw_deg,
            roll_deg: rng.gen_range(-8.0..8.0),
            skin,
            feature: rng.gen_range(10.0..(skin - 70.0)),
            hair: if rng.gen_bool(0.6) { Some(rng.gen_range(0.0..90.0)) } else { None },
            eye_spacing: rng.gen_range(0.16..0.23),
            eye_height: rng.gen_range(-0.14..-0.06),
            nose_height: rng.gen_range(0.04..0.12),
            mouth_height: rng.gen_range(0.2..0.3),
            mouth_width: rng.gen_range(0.09..0.15),
            light: (rng.gen_range(-40.0..40.0), rng.gen_range(-25.0..25.0)),
            noise: rng.gen_range(0.0..6.0),
        }
    }

    /// Landmarks normalised to the face box.
    pub fn landmarks(&self) -> Shape4 {
        let yaw = self.yaw_deg.to_radians();
        let (s, c) = yaw.sin_cos();
        let project = |x: f64, y: f64, z: f64| (0.5 + x * c + z * s, 0.5 + y);
        let mut pts = [(0.0, 0.0); LANDMARKS];
        pts[LEFT_EYE] = project(-self.eye_spacing, self.eye_height, 0.15);
        pts[RIGHT_EYE] = project(self.eye_spacing, self.eye_height, 0.15);
        pts[NOSE] = project(0.0, self.nose_height, 0.3);
        pts[MOUTH] = project(0.0, self.mouth_height, 0.18);
        if self.yaw_deg > PROFILE_YAW {
            pts[LEFT_EYE] = pts[RIGHT_EYE];
        } else if self.yaw_deg < -PROFILE_YAW {
            pts[RIGHT_EYE] = pts[LEFT_EYE];
        }
        let (rs, rc) = self.roll_deg.to_radians().sin_cos();
        for p in pts.iter_mut() {
            let (dx, dy) = (p.0 - 0.5, p.1 - 0.5);
            *p = (0.5 + rc * dx - rs * dy, 0.5 + rs * dx + rc * dy);
        }
        Shape4::from_points(pts)
    }
}

fn smoothstep(edge: f64, d: f64) -> f64 {
    // Coverage of a soft edge `edge` wide: 1 inside (d < 0), 0 outside.
    (0.5 - d / edge).clamp(0.0, 1.0)
}

/// Signed distance-like value of point `(u, v)` to an axis-aligned ellipse,
/// in units of the face box.
fn ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> f64 {
    let q = ((u - cu) / ru).powi(2) + ((v - cv) / rv).powi(2);
    (q.sqrt() - 1.0) * ru.min(rv)
}

/// Draws a face into the square box at `(x0, y0)` with side `size` pixels
/// and returns its landmarks normalised to that box.
pub fn render_face(img: &mut GrayImage, x0: f64, y0: f64, size: f64, style: &FaceStyle, rng: &mut impl Rng) -> Shape4 {
    let shape = style.landmarks();
    let yaw = style.yaw_deg.to_radians();
    let (sy, cy) = yaw.sin_cos();
    let profile = style.yaw_deg.abs() > PROFILE_YAW;
    let (rs, rc) = style.roll_deg.to_radians().sin_cos();
    let px = 1.0 / size;
    let eye_ru = 0.055 * (0.45 + 0.55 * cy);
    let eye_rv = 0.03;
    let mouth_ru = style.mouth_width * (0.4 + 0.6 * cy) + 0.02;
    // Unrolled landmark positions for drawing.
    let unroll = |(u, v): (f64, f64)| {
        let (dx, dy) = (u - 0.5, v - 0.5);
        (0.5 + rc * dx + rs * dy, 0.5 - rs * dx + rc * dy)
    };
    let le = unroll(shape.point(LEFT_EYE));
    let re = unroll(shape.point(RIGHT_EYE));
    let nose = unroll(shape.point(NOSE));
    let mouth = unroll(shape.point(MOUTH));
    let head_cu = 0.5 + 0.04 * sy;
    let head_ru = 0.4 - 0.05 * sy.abs();

    let xa = (x0.floor() as isize).max(0) as usize;
    let ya = (y0.floor() as isize).max(0) as usize;
    let xb = ((x0 + size).ceil() as usize).min(img.width());
    let yb = ((y0 + size).ceil() as usize).min(img.height());
    for py in ya..yb {
        for pxi in xa..xb {
            let (ru, rv) = ((pxi as f64 + 0.5 - x0) / size, (py as f64 + 0.5 - y0) / size);
            let (dx, dy) = (ru - 0.5, rv - 0.5);
            let (u, v) = (0.5 + rc * dx + rs * dy, 0.5 - rs * dx + rc * dy);
            let head = smoothstep(2.0 * px, ellipse(u, v, head_cu, 0.52, head_ru, 0.47));
            if head <= 0.0 {
                continue;
            }
            let mut val = style.skin + style.light.0 * (u - 0.5) + style.light.1 * (v - 0.5);
            if let Some(h) = style.hair {
                let hair = smoothstep(2.0 * px, v - (0.16 + 0.04 * ((u - head_cu) * 6.0).cos()));
                val += (h - val) * hair;
            }
            // Eyes and brows.
            let mut eyes: Vec<(f64, f64)> = Vec::with_capacity(2);
            if profile {
                eyes.push(if style.yaw_deg > 0.0 { re } else { le });
            } else {
                eyes.push(le);
                eyes.push(re);
            }
            for &(eu, ev) in &eyes {
                let e = smoothstep(1.5 * px, ellipse(u, v, eu, ev, eye_ru, eye_rv));
                val += (style.feature - val) * e;
                let b = smoothstep(1.5 * px, ellipse(u, v, eu, ev - 0.075, eye_ru * 1.3, 0.018));
                val += (style.feature + 20.0 - val) * 0.8 * b;
            }
            // Nose: shaded ridge and a dark tip.
            let ridge = smoothstep(2.0 * px, ellipse(u, v, nose.0 - 0.02 * sy, (nose.1 + le.1) / 2.0, 0.03, 0.1));
            val -= 25.0 * ridge;
            let tip = smoothstep(1.5 * px, ellipse(u, v, nose.0, nose.1, 0.04, 0.022));
            val += (style.feature + 25.0 - val) * 0.8 * tip;
            // Mouth.
            let m = smoothstep(1.5 * px, ellipse(u, v, mouth.0, mouth.1, mouth_ru, 0.028));
            val += (style.feature - val) * m;

            let noise = if style.noise > 0.0 { rng.gen_range(-style.noise..style.noise) } else { 0.0 };
            let bg = img.get(pxi, py) as f64;
            img.set(pxi, py, round_u8(bg + (val + noise - bg) * head));
        }
    }
    shape
}

/// Random background texture: layered smooth noise, stripes, blobs and
/// shapes.
pub fn texture(width: usize, height: usize, rng: &mut impl Rng) -> GrayImage {
    let mut acc = vec![rng.gen_range(40.0..200.0); width * height];
    let layers = rng.gen_range(2..5);
    for _ in 0..layers {
        match rng.gen_range(0..5) {
            0 => {
                // Smooth value noise.
                let cell = rng.gen_range(3.0..30.0);
                let amp = rng.gen_range(20.0..90.0);
                let gw = (width as f64 / cell).ceil() as usize + 2;
                let gh = (height as f64 / cell).ceil() as usize + 2;
                let grid: Vec<f64> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for y in 0..height {
                    for x in 0..width {
                        let (fx, fy) = (x as f64 / cell, y as f64 / cell);
                        let (ix, iy) = (fx as usize, fy as usize);
                        let (ax, ay) = (fx - ix as f64, fy - iy as f64);
                        let g = |i: usize, j: usize| grid[j * gw + i];
                        let top = g(ix, iy) * (1.0 - ax) + g(ix + 1, iy) * ax;
                        let bot = g(ix, iy + 1) * (1.0 - ax) + g(ix + 1, iy + 1) * ax;
                        acc[y * width + x] += amp * (top * (1.0 - ay) + bot * ay);
                    }
                }
            }
            1 => {
                // Stripes.
                let theta = rng.gen_range(0.0..PI);
                let period = rng.gen_range(3.0..25.0);
                let amp = rng.gen_range(15.0..70.0);
                let (s, c) = theta.sin_cos();
                for y in 0..height {
                    for x in 0..width {
                        let t = (x as f64 * c + y as f64 * s) * 2.0 * PI / period;
                        acc[y * width + x] += amp * t.sin();
                    }
                }
            }
            2 => {
                // Ellipses.
                for _ in 0..rng.gen_range(3..25) {
                    let (cx, cy) = (rng.gen_range(0.0..width as f64), rng.gen_range(0.0..height as f64));
                    let (rx, ry) = (rng.gen_range(2.0..30.0), rng.gen_range(2.0..30.0));
                    let val = rng.gen_range(-80.0..80.0);
                    for y in 0..height {
                        for x in 0..width {
                            let q = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
                            if q <= 1.0 {
                                acc[y * width + x] += val;
                            }
                        }
                    }
                }
            }
            3 => {
                // Rectangles.
                for _ in 0..rng.gen_range(3..20) {
                    let (x0, y0) = (rng.gen_range(0..width), rng.gen_range(0..height));
                    let (w, h) = (rng.gen_range(2..40), rng.gen_range(2..40));
                    let val = rng.gen_range(-80.0..80.0);
                    for y in y0..(y0 + h).min(height) {
                        for x in x0..(x0 + w).min(width) {
                            acc[y * width + x] += val;
                        }
                    }
                }
            }
            _ => {
                // Linear gradient.
                let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                for y in 0..height {
                    for x in 0..width {
                        acc[y * width + x] += gx * x as f64 + gy * y as f64;
                    }
                }
            }
        }
    }
    let noise = rng.gen_range(0.0..12.0);
    let data = acc
        .into_iter()
        .map(|v| round_u8(v + if noise > 0.0 { rng.gen_range(-noise..noise) } else { 0.0 }))
        .collect();
    GrayImage::new(width, height, data).expect("dimensions match")
}

/// A face placed in an image.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceAnnotation {
    pub rect: Rect,
    pub yaw: f64,
    pub shape: Shape4,
}

/// An image with its faces.
#[derive(Clone, Debug)]
pub struct Scene {
    pub image: GrayImage,
    pub faces: Vec<FaceAnnotation>,
}

/// Uniform yaw in [-90, 90].
pub fn random_yaw(rng: &mut impl Rng) -> f64 {
    rng.gen_range(-90.0..=90.0)
}

/// A textured image of `side x side` pixels with one face of `face` pixels
/// near the centre.
pub fn face_image(side: usize, face: usize, yaw: f64, rng: &mut impl Rng) -> Scene {
    let mut image = texture(side, side, rng);
    let slack = (side - face) / 2;
    let jitter = (slack / 4).max(1);
    let x0 = rng.gen_range(slack - jitter.min(slack)..=slack + jitter.min(side - face - slack));
    let y0 = rng.gen_range(slack - jitter.min(slack)..=slack + jitter.min(side - face - slack));
    let style = FaceStyle::random(yaw, rng);
    let shape = render_face(&mut image, x0 as f64, y0 as f64, face as f64, &style, rng);
    Scene {
        image,
        faces: vec![FaceAnnotation {
            rect: Rect::new(x0, y0, face, face),
            yaw,
            shape,
        }],
    }
}

/// A `width x height` texture with up to `max_faces` non-overlapping faces
/// of side `face_sizes`.
pub fn scene(
    width: usize,
    height: usize,
    max_faces: usize,
    face_sizes: (usize, usize),
    rng: &mut impl Rng,
) -> Scene {
    let mut image = texture(width, height, rng);
    let mut faces: Vec<FaceAnnotation> = Vec::new();
    let mut attempts = 0;
    while faces.len() < max_faces && attempts < 50 * max_faces {
        attempts += 1;
        let size = rng.gen_range(face_sizes.0..=face_sizes.1);
        if size > width || size > height {
            continue;
        }
        let x0 = rng.gen_range(0..=width - size);
        let y0 = rng.gen_range(0..=height - size);
        let r = Rect::new(x0, y0, size, size);
        let overlaps = faces.iter().any(|f| {
            let a = &f.rect;
            x0 < a.x + a.width + 4 && a.x < x0 + size + 4 && y0 < a.y + a.height + 4 && a.y < y0 + size + 4
        });
        if overlaps {
            continue;
        }
        let yaw = random_yaw(rng);
        let style = FaceStyle::random(yaw, rng);
        let shape = render_face(&mut image, x0 as f64, y0 as f64, size as f64, &style, rng);
        faces.push(FaceAnnotation { rect: r, yaw, shape });
    }
    Scene { image, faces }
}

/// Sizes of a generated training set.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub faces: usize,
    pub negatives: usize,
    /// Side of each positive image.
    pub face_image_side: usize,
    /// Face side inside positive images.
    pub face_side: usize,
    pub negative_size: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            faces: 600,
            negatives: 60,
            face_image_side: 64,
            face_side: 44,
            negative_size: (160, 120),
            seed: 0,
        }
    }
}

/// In-memory training set: one face per positive image, yaw uniform over
/// [-90, 90], plus face-free texture images.
pub fn dataset(cfg: &SynthConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let positives = (0..cfg.faces)
        .map(|i| {
            // Stratified yaw so every view is populated.
            let yaw = -90.0 + 180.0 * (i as f64 + rng.gen_range(0.0..1.0)) / cfg.faces as f64;
            let s = face_image(cfg.face_image_side, cfg.face_side, yaw.clamp(-90.0, 90.0), &mut rng);
            let f = &s.faces[0];
            PositiveRecord {
                image: Arc::new(s.image),
                rect: f.rect,
                yaw: f.yaw,
                shape: Some(f.shape),
                source: format!("face{i:05}"),
            }
        })
        .collect();
    let negatives = (0..cfg.negatives)
        .map(|i| {
            (
                format!("neg{i:05}"),
                Arc::new(texture(cfg.negative_size.0, cfg.negative_size.1, &mut rng)),
            )
        })
        .collect();
    Dataset { positives, negatives }
}

/// Face-free texture images.
pub fn negative_images(n: usize, width: usize, height: usize, seed: u64) -> Vec<GrayImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| texture(width, height, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontal_landmarks_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut style = FaceStyle::random(0.0, &mut rng);
        style.roll_deg = 0.0;
        let s = style.landmarks();
        let (l, r) = (s.point(LEFT_EYE), s.point(RIGHT_EYE));
        assert!((l.0 + r.0 - 1.0).abs() < 1e-12);
        assert_eq!(s.point(NOSE).0, 0.5);
        assert!(s.in_unit_square());
    }

    #[test]
    fn profiles_have_coincident_eyes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for yaw in [-85.0, -61.0, 70.0, 90.0] {
            let s = FaceStyle::random(yaw, &mut rng).landmarks();
            assert_eq!(s.point(LEFT_EYE), s.point(RIGHT_EYE));
            assert!(s.in_unit_square());
        }
        let s = FaceStyle::random(30.0, &mut rng).landmarks();
        assert_ne!(s.point(LEFT_EYE), s.point(RIGHT_EYE));
    }

    #[test]
    fn mirrored_yaw_mirrors_landmarks() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for yaw in [-75.0, -30.0, 10.0, 45.0, 80.0] {
            let a = FaceStyle::random(yaw, &mut rng);
            let mut b = a.clone();
            b.yaw_deg = -yaw;
            b.roll_deg = -a.roll_deg;
            let d = a.landmarks().mirrored().mean_distance(&b.landmarks());
            assert!(d < 1e-12, "yaw {yaw}: {d}");
        }
    }

    #[test]
    fn face_darkens_eye_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut img = GrayImage::filled(60, 60, 128).unwrap();
        let mut style = FaceStyle::random(0.0, &mut rng);
        style.noise = 0.0;
        style.hair = None;
        let s = render_face(&mut img, 10.0, 10.0, 40.0, &style, &mut rng);
        let (u, v) = s.point(LEFT_EYE);
        let eye = img.get((10.0 + u * 40.0) as usize, (10.0 + v * 40.0) as usize) as f64;
        let cheek = img.get((10.0 + u * 40.0) as usize, (10.0 + (v + 0.12) * 40.0) as usize) as f64;
        assert!(eye + 30.0 < cheek, "eye {eye} cheek {cheek}");
    }

    #[test]
    fn scenes_are_deterministic_and_disjoint() {
        let a = scene(200, 150, 3, (40, 70), &mut ChaCha8Rng::seed_from_u64(5));
        let b = scene(200, 150, 3, (40, 70), &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.image, b.image);
        assert_eq!(a.faces, b.faces);
        for f in &a.faces {
            assert!(f.rect.fits(200, 150));
        }
    }

    #[test]
    fn dataset_covers_all_yaws() {
        let d = dataset(&SynthConfig {
            faces: 50,
            negatives: 2,
            ..Default::default()
        });
        assert_eq!(d.positives.len(), 50);
        assert!(d.positives.iter().any(|p| p.yaw < -60.0));
        assert!(d.positives.iter().any(|p| p.yaw > 60.0));
        assert_eq!(d.negatives.len(), 2);
    }
}
