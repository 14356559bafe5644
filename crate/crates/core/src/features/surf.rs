//! SURF-style patch descriptors on the integral image.
//!
//! A patch is split into 2x2 cells. Each cell accumulates eight statistics
//! of the Haar responses `dx`, `dy`: `Σdx` and `Σ|dx|` separately for
//! `dy >= 0` and `dy < 0`, then `Σdy` and `Σ|dy|` split on the sign of `dx`.
//! The 32 values are L2-normalised.
//!
//! The Haar responses at pixel `p` are three-pixel column (row) differences
//! taken from the integral image; a pixel whose 3x3 neighbourhood leaves
//! the window has zero response, so a descriptor only depends on the
//! window's own pixels.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{IntegralImage, WindowRect, WINDOW_SIZE};

pub const SURF_DIM: usize = 32;

/// Number of patches in the default pool.
pub const SURF_POOL_SIZE: usize = 56;

/// Step between adjacent patch origins.
pub const SURF_STEP: usize = 16;

/// A rectangle inside the canonical window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SurfPatch {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl SurfPatch {
    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::config(format!("degenerate SURF patch {self:?}")));
        }
        if self.x + self.width > WINDOW_SIZE || self.y + self.height > WINDOW_SIZE {
            return Err(Error::config(format!(
                "SURF patch {self:?} leaves the {WINDOW_SIZE}x{WINDOW_SIZE} window"
            )));
        }
        Ok(())
    }
}

/// Origins along one axis: multiples of the step that keep the side inside
/// the window, plus the end-snapped origin `40 - side`.
fn axis_origins(side: usize) -> Vec<usize> {
    let last = WINDOW_SIZE - side;
    let mut origins: Vec<usize> = (0..=last).step_by(SURF_STEP).collect();
    if *origins.last().unwrap() != last {
        origins.push(last);
    }
    origins
}

/// Patch shapes in pool order: squares first, then rectangles.
pub const POOL_SHAPES: [(usize, usize); 12] = [
    (16, 16),
    (24, 24),
    (32, 32),
    (40, 40),
    (16, 24),
    (24, 16),
    (16, 32),
    (32, 16),
    (24, 32),
    (32, 24),
    (16, 40),
    (40, 16),
];

/// The 56-patch pool: for each shape in [`POOL_SHAPES`], every origin pair
/// from the end-snapped step-16 grid, rows outer and columns inner.
pub fn default_surf_pool() -> Vec<SurfPatch> {
    let mut pool = Vec::with_capacity(SURF_POOL_SIZE);
    for &(w, h) in &POOL_SHAPES {
        for &y in &axis_origins(h) {
            for &x in &axis_origins(w) {
                pool.push(SurfPatch {
                    x,
                    y,
                    width: w,
                    height: h,
                });
            }
        }
    }
    pool
}

/// SHA-256 (hex) over the pool's textual enumeration, one `x y w h` line
/// per patch.
pub fn pool_hash(pool: &[SurfPatch]) -> String {
    let mut hasher = Sha256::new();
    for p in pool {
        hasher.update(format!("{} {} {} {}\n", p.x, p.y, p.width, p.height).as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Hash of [`default_surf_pool`].
pub fn default_pool_hash() -> String {
    pool_hash(&default_surf_pool())
}

/// Haar responses at image pixel `(x, y)`; zero unless the 3x3
/// neighbourhood lies inside `window`.
#[inline]
fn haar(ii: &IntegralImage, window: &WindowRect, x: usize, y: usize) -> (i64, i64) {
    if x <= window.x || y <= window.y || x + 1 >= window.x + window.width || y + 1 >= window.y + window.height {
        return (0, 0);
    }
    let dx = ii.sum(x + 1, y - 1, 1, 3) as i64 - ii.sum(x - 1, y - 1, 1, 3) as i64;
    let dy = ii.sum(x - 1, y + 1, 3, 1) as i64 - ii.sum(x - 1, y - 1, 3, 1) as i64;
    (dx, dy)
}

/// Descriptor of `patch` inside `window`, written to `out`.
///
/// The window must be canonical-sized and inside the image and the patch
/// valid; both are checked by [`surf_descriptor`].
pub fn surf_descriptor_into(ii: &IntegralImage, window: &WindowRect, patch: &SurfPatch, out: &mut [f64]) {
    let (cw, ch) = (patch.width / 2, patch.height / 2);
    let x0 = window.x + patch.x;
    let y0 = window.y + patch.y;
    for cy in 0..2 {
        for cx in 0..2 {
            let mut s = [0i64; 8];
            // Odd sides give the remainder to the second cell.
            let (xs, xe) = (x0 + cx * cw, if cx == 0 { x0 + cw } else { x0 + patch.width });
            let (ys, ye) = (y0 + cy * ch, if cy == 0 { y0 + ch } else { y0 + patch.height });
            for y in ys..ye {
                for x in xs..xe {
                    let (dx, dy) = haar(ii, window, x, y);
                    if dy >= 0 {
                        s[0] += dx;
                        s[1] += dx.abs();
                    } else {
                        s[2] += dx;
                        s[3] += dx.abs();
                    }
                    if dx >= 0 {
                        s[4] += dy;
                        s[5] += dy.abs();
                    } else {
                        s[6] += dy;
                        s[7] += dy.abs();
                    }
                }
            }
            let base = (cy * 2 + cx) * 8;
            for (k, v) in s.iter().enumerate() {
                out[base + k] = *v as f64;
            }
        }
    }
    normalize_l2(&mut out[..SURF_DIM]);
}

/// 32-dimensional descriptor of `patch` inside `window`.
pub fn surf_descriptor(ii: &IntegralImage, window: &WindowRect, patch: &SurfPatch) -> Result<[f64; SURF_DIM]> {
    patch.validate()?;
    if window.width != WINDOW_SIZE || window.height != WINDOW_SIZE {
        return Err(Error::input(format!("SURF needs a {WINDOW_SIZE}px window, got {window:?}")));
    }
    if !window.rect().fits(ii.width(), ii.height()) {
        return Err(Error::input(format!("window {window:?} outside image")));
    }
    let mut out = [0.0; SURF_DIM];
    surf_descriptor_into(ii, window, patch, &mut out);
    Ok(out)
}

/// Concatenated descriptors of the selected pool groups.
pub fn surf_group_features(
    ii: &IntegralImage,
    window: &WindowRect,
    pool: &[SurfPatch],
    groups: &[usize],
    out: &mut Vec<f64>,
) {
    out.clear();
    out.resize(groups.len() * SURF_DIM, 0.0);
    for (chunk, &g) in out.chunks_exact_mut(SURF_DIM).zip(groups) {
        surf_descriptor_into(ii, window, &pool[g], chunk);
    }
}

pub(crate) fn normalize_l2(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}
