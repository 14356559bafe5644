//! Collecting false positives of a partially trained funnel.

use log::warn;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::funnel::detect::{scan_image, DetectParams};
use crate::funnel::scan::CascadeView;
use crate::imaging::GrayImage;

/// Scan settings used while mining.
#[derive(Clone, Debug, PartialEq)]
pub struct MiningParams {
    pub stride: usize,
    pub scale_factor: f64,
    pub min_face: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            stride: 2,
            scale_factor: 1.25,
            min_face: 40,
        }
    }
}

impl MiningParams {
    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            stride: self.stride,
            scale_factor: self.scale_factor,
            min_face: self.min_face,
            ..Default::default()
        }
    }
}

/// Mined windows and how many were available.
#[derive(Clone, Debug, Default)]
pub struct MinedNegatives {
    pub samples: Vec<GrayImage>,
    /// Windows that passed the prefix across all images.
    pub available: usize,
    /// Fewer than the requested number were available.
    pub short: bool,
}

/// Scans `images` with `view` and returns up to `n` surviving windows as
/// 40x40 rasters, sampled uniformly (reservoir sampling in scan order).
pub fn mine_hard_negatives<I: AsRef<GrayImage>>(
    view: &CascadeView,
    images: &[I],
    n: usize,
    params: &MiningParams,
    seed: u64,
) -> Result<MinedNegatives> {
    if images.is_empty() {
        return Err(Error::input("no negative images to mine"));
    }
    let dp = params.detect_params();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<GrayImage> = Vec::with_capacity(n);
    let mut seen = 0usize;
    for img in images {
        let scan = scan_image(view, img.as_ref(), &dp)?;
        for s in &scan.survivors {
            seen += 1;
            if reservoir.len() < n {
                reservoir.push(scan.crop(s));
            } else if n > 0 {
                let j = rng.gen_range(0..seen);
                if j < n {
                    reservoir[j] = scan.crop(s);
                }
            }
        }
    }
    let short = seen < n;
    if short {
        warn!("only {seen} of {n} requested negatives pass the current cascade");
    }
    Ok(MinedNegatives {
        samples: reservoir,
        available: seen,
        short,
    })
}
