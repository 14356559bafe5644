//! Brute-force reference implementations shared by the integration tests.
//! They read pixels directly and never touch integral images or the
//! library's own helpers.

#![allow(dead_code)]

pub mod checks;

use std::f64::consts::TAU;

use funnel_cascade::neural::{loss, Example, MlpModel, Objective};
use funnel_cascade::GrayImage;

pub fn pixel_sum(img: &GrayImage, x: usize, y: usize, w: usize, h: usize) -> u64 {
    let mut s = 0u64;
    for yy in y..y + h {
        for xx in x..x + w {
            s += img.get(xx, yy) as u64;
        }
    }
    s
}

/// LAB code with the top-left of the 3x3 block grid at `(x, y)`. Bits in
/// reading order of the eight neighbours, set when the centre is strictly
/// brighter.
pub fn lab_code(img: &GrayImage, x: usize, y: usize, bw: usize, bh: usize) -> u8 {
    let centre = pixel_sum(img, x + bw, y + bh, bw, bh);
    let mut code = 0u8;
    let mut bit = 0;
    for j in 0..3 {
        for i in 0..3 {
            if i == 1 && j == 1 {
                continue;
            }
            if centre > pixel_sum(img, x + i * bw, y + j * bh, bw, bh) {
                code |= 1 << bit;
            }
            bit += 1;
        }
    }
    code
}

/// Haar responses at `(x, y)`: right column minus left column and bottom
/// row minus top row of the 3x3 neighbourhood; zero when that
/// neighbourhood is not strictly inside the window.
fn haar(img: &GrayImage, win: (usize, usize, usize), x: usize, y: usize) -> (i64, i64) {
    let (wx, wy, side) = win;
    let inside = x > wx && y > wy && x + 1 < wx + side && y + 1 < wy + side;
    if !inside {
        return (0, 0);
    }
    let mut dx = 0i64;
    let mut dy = 0i64;
    for k in 0..3 {
        dx += img.get(x + 1, y - 1 + k) as i64 - img.get(x - 1, y - 1 + k) as i64;
        dy += img.get(x - 1 + k, y + 1) as i64 - img.get(x - 1 + k, y - 1) as i64;
    }
    (dx, dy)
}

/// SURF descriptor of patch `(px, py, pw, ph)` of the window whose top-left
/// is `(wx, wy)` with side `side`.
pub fn surf(img: &GrayImage, wx: usize, wy: usize, side: usize, patch: (usize, usize, usize, usize)) -> Vec<f64> {
    let (px, py, pw, ph) = patch;
    let mut out = Vec::with_capacity(32);
    let xs = [(0, pw / 2), (pw / 2, pw)];
    let ys = [(0, ph / 2), (ph / 2, ph)];
    for &(y0, y1) in &ys {
        for &(x0, x1) in &xs {
            let mut cell = [0.0f64; 8];
            for y in y0..y1 {
                for x in x0..x1 {
                    let (dx, dy) = haar(img, (wx, wy, side), wx + px + x, wy + py + y);
                    let (dx, dy) = (dx as f64, dy as f64);
                    let a = if dy >= 0.0 { 0 } else { 2 };
                    cell[a] += dx;
                    cell[a + 1] += dx.abs();
                    let b = if dx >= 0.0 { 4 } else { 6 };
                    cell[b] += dy;
                    cell[b + 1] += dy.abs();
                }
            }
            out.extend_from_slice(&cell);
        }
    }
    let n = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        out.iter_mut().for_each(|v| *v /= n);
    }
    out
}

fn tent(d: f64) -> f64 {
    (1.0 - d.abs()).max(0.0)
}

/// Upright SIFT at window point `(u, v)` of a square raster: each pixel's
/// gradient votes into every spatial and orientation bin with tent weights
/// measured from the bin centres.
pub fn sift(img: &GrayImage, u: f64, v: f64, radius: f64) -> Vec<f64> {
    let side = img.width();
    let (cx, cy) = (u * side as f64, v * side as f64);
    let bw = radius / 2.0;
    let ob = TAU / 8.0;
    let mut h = vec![0.0f64; 128];
    for j in 1..side - 1 {
        for i in 1..side - 1 {
            let rx = i as f64 + 0.5 - cx;
            let ry = j as f64 + 0.5 - cy;
            if rx < -radius || rx >= radius || ry < -radius || ry >= radius {
                continue;
            }
            let gx = img.get(i + 1, j) as f64 - img.get(i - 1, j) as f64;
            let gy = img.get(i, j + 1) as f64 - img.get(i, j - 1) as f64;
            if gx == 0.0 && gy == 0.0 {
                continue;
            }
            let g = (gx * gx + gy * gy).sqrt() * (-(rx * rx + ry * ry) / (2.0 * radius * radius)).exp();
            let theta = gy.atan2(gx).rem_euclid(TAU);
            for by in 0..4 {
                let wy = tent((ry - (-radius + (by as f64 + 0.5) * bw)) / bw);
                for bx in 0..4 {
                    let wx = tent((rx - (-radius + (bx as f64 + 0.5) * bw)) / bw);
                    for o in 0..8 {
                        let mut d = (theta - o as f64 * ob).abs();
                        d = d.min(TAU - d);
                        let wo = tent(d / ob);
                        h[(by * 4 + bx) * 8 + o] += g * wy * wx * wo;
                    }
                }
            }
        }
    }
    let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return h;
    }
    h.iter_mut().for_each(|v| *v = (*v / n).min(0.2));
    let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Central-difference derivative of the loss with respect to one parameter:
/// `bias = false` selects `weights[index]` of layer `layer`.
pub fn numeric_partial(model: &MlpModel, batch: &[Example], obj: Objective, layer: usize, bias: bool, index: usize, h: f64) -> f64 {
    let eval = |delta: f64| {
        let mut m = model.clone();
        let l = &mut m.layers_mut()[layer];
        if bias {
            l.biases[index] += delta;
        } else {
            l.weights[index] += delta;
        }
        loss(&m, batch, obj).unwrap()
    };
    (eval(h) - eval(-h)) / (2.0 * h)
}

/// IoU of two `(x, y, w, h)` boxes.
pub fn iou(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let w = ((a.0 + a.2).min(b.0 + b.2) - a.0.max(b.0)).max(0.0);
    let h = ((a.1 + a.3).min(b.1 + b.3) - a.1.max(b.1)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        0.0
    } else {
        inter / (a.2 * a.3 + b.2 * b.3 - inter)
    }
}

/// Random grey image with values in `0..=255`.
pub fn random_image(w: usize, h: usize, rng: &mut impl rand::Rng) -> GrayImage {
    GrayImage::from_fn(w, h, |_, _| rng.gen()).unwrap()
}
