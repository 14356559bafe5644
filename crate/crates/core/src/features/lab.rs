//! Locally assembled binary (LAB) codes.
//!
//! A code compares the pixel sum of a centre block against its eight
//! neighbours in a 3x3 arrangement of equally sized blocks. The map stores
//! one code per pixel and block size, so evaluating a feature inside any
//! window is one array read.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{GrayImage, IntegralImage, WindowRect, WINDOW_SIZE};

/// Block sizes `(width, height)` used by default, in canonical-window pixels.
pub const DEFAULT_BLOCK_SIZES: [(usize, usize); 2] = [(4, 4), (8, 8)];

/// Neighbour offsets in block units, in bit order NW, N, NE, W, E, SW, S, SE.
pub const NEIGHBOURS: [(usize, usize); 8] = [
    (0, 0),
    (1, 0),
    (2, 0),
    (0, 1),
    (2, 1),
    (0, 2),
    (1, 2),
    (2, 2),
];

/// Per-pixel LAB codes for each configured block size.
#[derive(Clone, Debug)]
pub struct LabFeatureMap {
    width: usize,
    height: usize,
    block_sizes: Vec<(usize, usize)>,
    codes: Vec<Vec<u8>>,
}

/// Position of a LAB feature inside the canonical window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabFeatureLocator {
    pub dx: usize,
    pub dy: usize,
    pub block_size_index: usize,
}

impl LabFeatureLocator {
    /// True when the 3x3 block neighbourhood fits in the canonical window.
    pub fn fits(&self, block_sizes: &[(usize, usize)]) -> bool {
        match block_sizes.get(self.block_size_index) {
            Some(&(bw, bh)) => self.dx + 3 * bw <= WINDOW_SIZE && self.dy + 3 * bh <= WINDOW_SIZE,
            None => false,
        }
    }
}

/// Every locator whose neighbourhood fits in the canonical window, ordered
/// by block size, then row, then column.
pub fn all_locators(block_sizes: &[(usize, usize)]) -> Vec<LabFeatureLocator> {
    let mut out = Vec::new();
    for (i, &(bw, bh)) in block_sizes.iter().enumerate() {
        if 3 * bw > WINDOW_SIZE || 3 * bh > WINDOW_SIZE {
            continue;
        }
        for dy in 0..=WINDOW_SIZE - 3 * bh {
            for dx in 0..=WINDOW_SIZE - 3 * bw {
                out.push(LabFeatureLocator {
                    dx,
                    dy,
                    block_size_index: i,
                });
            }
        }
    }
    out
}

impl LabFeatureMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn block_sizes(&self) -> &[(usize, usize)] {
        &self.block_sizes
    }

    /// Raw code raster for one block size.
    pub fn codes(&self, block_size_index: usize) -> &[u8] {
        &self.codes[block_size_index]
    }

    #[inline]
    pub fn code(&self, x: usize, y: usize, block_size_index: usize) -> u8 {
        self.codes[block_size_index][y * self.width + x]
    }

    pub fn from_integral(ii: &IntegralImage, block_sizes: &[(usize, usize)]) -> Result<Self> {
        let (w, h) = (ii.width(), ii.height());
        let smallest = block_sizes
            .iter()
            .copied()
            .min_by_key(|&(bw, bh)| bw.max(bh))
            .ok_or_else(|| Error::config("at least one LAB block size is required"))?;
        if block_sizes.iter().any(|&(bw, bh)| bw == 0 || bh == 0) {
            return Err(Error::config("LAB block sizes must be positive"));
        }
        if w < 3 * smallest.0 || h < 3 * smallest.1 {
            return Err(Error::input(format!(
                "{w}x{h} image is smaller than three {}x{} blocks",
                smallest.0, smallest.1
            )));
        }

        let codes = block_sizes
            .iter()
            .map(|&(bw, bh)| {
                let mut out = vec![0u8; w * h];
                if w < 3 * bw || h < 3 * bh {
                    return out;
                }
                // Block sums for every top-left position.
                let (sw, sh) = (w - bw + 1, h - bh + 1);
                let mut sums = vec![0u64; sw * sh];
                for y in 0..sh {
                    for x in 0..sw {
                        sums[y * sw + x] = ii.sum(x, y, bw, bh);
                    }
                }
                for y in 0..=h - 3 * bh {
                    for x in 0..=w - 3 * bw {
                        let centre = sums[(y + bh) * sw + x + bw];
                        let mut code = 0u8;
                        for (bit, &(i, j)) in NEIGHBOURS.iter().enumerate() {
                            if centre > sums[(y + j * bh) * sw + x + i * bw] {
                                code |= 1 << bit;
                            }
                        }
                        out[y * w + x] = code;
                    }
                }
                out
            })
            .collect();

        Ok(LabFeatureMap {
            width: w,
            height: h,
            block_sizes: block_sizes.to_vec(),
            codes,
        })
    }
}

/// Computes the LAB map of `img` for the given block sizes.
pub fn compute_lab_map(img: &GrayImage, block_sizes: &[(usize, usize)]) -> Result<LabFeatureMap> {
    LabFeatureMap::from_integral(&IntegralImage::new(img), block_sizes)
}

/// Code of feature `loc` inside `window`: a single lookup.
#[inline]
pub fn lab_code_at(map: &LabFeatureMap, window: &WindowRect, loc: &LabFeatureLocator) -> u8 {
    map.code(window.x + loc.dx, window.y + loc.dy, loc.block_size_index)
}
