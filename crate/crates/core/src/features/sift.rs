//! Upright SIFT descriptors at arbitrary points of a canonical window.
//!
//! 4x4 spatial bins over a `2r x 2r` patch, 8 orientation bins, trilinear
//! vote distribution and a Gaussian weight with `sigma = r`. Gradients are
//! central differences; a pixel whose neighbours leave the window has zero
//! gradient.

use crate::imaging::{GrayImage, WindowRect, WINDOW_SIZE};

pub const SIFT_DIM: usize = 128;
pub const DEFAULT_SIFT_RADIUS: f64 = 8.0;
const SPATIAL_BINS: usize = 4;
const ORIENTATION_BINS: usize = 8;
const CLIP: f64 = 0.2;

/// Descriptor at normalised window point `(u, v)` written into `out[..128]`.
pub fn sift_descriptor_into(
    img: &GrayImage,
    window: &WindowRect,
    point: (f64, f64),
    radius: f64,
    out: &mut [f64],
) {
    let out = &mut out[..SIFT_DIM];
    out.fill(0.0);
    let side = window.width;
    let u = point.0.clamp(0.0, 1.0);
    let v = point.1.clamp(0.0, 1.0);
    let cx = u * side as f64;
    let cy = v * side as f64;
    let bin_width = 2.0 * radius / SPATIAL_BINS as f64;
    let inv_two_sigma_sq = 1.0 / (2.0 * radius * radius);
    let orient_scale = ORIENTATION_BINS as f64 / std::f64::consts::TAU;

    let lo = |c: f64| ((c - radius - 0.5).ceil().max(1.0)) as usize;
    let hi = |c: f64| ((c + radius - 0.5).ceil().min(side as f64 - 1.0)) as usize;
    let stride = img.width();
    let data = img.data();
    let at = |i: usize, j: usize| data[(window.y + j) * stride + window.x + i] as f64;

    for j in lo(cy)..hi(cy) {
        let rel_y = j as f64 + 0.5 - cy;
        if rel_y < -radius || rel_y >= radius {
            continue;
        }
        for i in lo(cx)..hi(cx) {
            let rel_x = i as f64 + 0.5 - cx;
            if rel_x < -radius || rel_x >= radius {
                continue;
            }
            let gx = at(i + 1, j) - at(i - 1, j);
            let gy = at(i, j + 1) - at(i, j - 1);
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            let mag = (gx * gx + gy * gy).sqrt();
            let weight = mag * (-(rel_x * rel_x + rel_y * rel_y) * inv_two_sigma_sq).exp();

            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::TAU;
            }
            let o = theta * orient_scale;
            let o0 = o.floor();
            let fo = o - o0;
            let o0 = (o0 as usize) % ORIENTATION_BINS;
            let o1 = (o0 + 1) % ORIENTATION_BINS;

            let bx = (rel_x + radius) / bin_width - 0.5;
            let by = (rel_y + radius) / bin_width - 0.5;
            let bx0 = bx.floor();
            let by0 = by.floor();
            let fx = bx - bx0;
            let fy = by - by0;
            let (bx0, by0) = (bx0 as isize, by0 as isize);

            for (yb, wy) in [(by0, 1.0 - fy), (by0 + 1, fy)] {
                if yb < 0 || yb >= SPATIAL_BINS as isize {
                    continue;
                }
                for (xb, wx) in [(bx0, 1.0 - fx), (bx0 + 1, fx)] {
                    if xb < 0 || xb >= SPATIAL_BINS as isize {
                        continue;
                    }
                    let base = (yb as usize * SPATIAL_BINS + xb as usize) * ORIENTATION_BINS;
                    let w = weight * wy * wx;
                    out[base + o0] += w * (1.0 - fo);
                    out[base + o1] += w * fo;
                }
            }
        }
    }
    finish(out);
}

/// L2-normalise, clip at 0.2, renormalise; zero vectors stay zero.
fn finish(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    for x in v.iter_mut() {
        *x = (*x / norm).min(CLIP);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
}

/// 128-dimensional upright SIFT of the canonical window raster `img`.
pub fn sift_descriptor(img: &GrayImage, point: (f64, f64), radius: f64) -> Vec<f64> {
    debug_assert!(img.width() == WINDOW_SIZE && img.height() == WINDOW_SIZE);
    let window = WindowRect::canonical(0, 0, 0);
    let mut out = vec![0.0; SIFT_DIM];
    sift_descriptor_into(img, &window, point, radius, &mut out);
    out
}
