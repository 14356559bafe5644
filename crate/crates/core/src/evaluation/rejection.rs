//! How many windows a funnel prefix discards and how many faces it keeps.

use std::collections::HashSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::features::Shape4;
use crate::funnel::detect::{scan_image, to_detection, BoxF, DetectParams};
use crate::funnel::scan::{CascadeView, StageCounters, StageTimings, Survivor};
use crate::imaging::{enumerate_windows, GrayImage, Rect, WINDOW_SIZE};

/// Minimum IoU for a window or detection to count as covering a face.
pub const MATCH_IOU: f64 = 0.5;

/// An image with its ground-truth face boxes (possibly none).
#[derive(Clone, Debug)]
pub struct AnnotatedImage {
    pub id: String,
    pub image: Arc<GrayImage>,
    pub truths: Vec<Rect>,
    /// Landmarks of each truth, normalised to its box, when annotated.
    pub shapes: Vec<Option<Shape4>>,
}

impl AnnotatedImage {
    pub fn negative(id: impl Into<String>, image: Arc<GrayImage>) -> Self {
        AnnotatedImage {
            id: id.into(),
            image,
            truths: Vec::new(),
            shapes: Vec::new(),
        }
    }
}

pub fn rect_box(r: &Rect) -> BoxF {
    BoxF {
        x: r.x as f64,
        y: r.y as f64,
        width: r.width as f64,
        height: r.height as f64,
    }
}

/// Face recall and window removal of one prefix over a set of images.
///
/// Window counts use two denominators: `grid_windows` counts every window
/// of every pyramid level, while `distinct_windows` merges windows that map
/// to the same rounded box in the original image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecallRejection {
    pub images: usize,
    pub faces: usize,
    pub covered: usize,
    pub grid_windows: usize,
    pub distinct_windows: usize,
    pub survivors: usize,
    pub distinct_survivors: usize,
}

impl RecallRejection {
    /// Fraction of faces covered by a surviving window; `None` without faces.
    pub fn recall(&self) -> Option<f64> {
        (self.faces > 0).then(|| self.covered as f64 / self.faces as f64)
    }

    /// Fraction of grid windows discarded.
    pub fn removal(&self) -> f64 {
        if self.grid_windows == 0 {
            0.0
        } else {
            1.0 - self.survivors as f64 / self.grid_windows as f64
        }
    }

    /// Fraction of distinct windows discarded.
    pub fn distinct_removal(&self) -> f64 {
        if self.distinct_windows == 0 {
            0.0
        } else {
            1.0 - self.distinct_survivors as f64 / self.distinct_windows as f64
        }
    }

    pub fn survivors_per_image(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.survivors as f64 / self.images as f64
        }
    }

    pub fn windows_per_image(&self) -> f64 {
        if self.images == 0 {
            0.0
        } else {
            self.grid_windows as f64 / self.images as f64
        }
    }

    pub fn add(&mut self, o: &RecallRejection) {
        self.images += o.images;
        self.faces += o.faces;
        self.covered += o.covered;
        self.grid_windows += o.grid_windows;
        self.distinct_windows += o.distinct_windows;
        self.survivors += o.survivors;
        self.distinct_survivors += o.distinct_survivors;
    }
}

fn rounded_key(b: &BoxF) -> (i64, i64, i64) {
    (b.x.round() as i64, b.y.round() as i64, b.width.round() as i64)
}

/// Scans every image with `view` (no NMS) and measures which faces keep a
/// covering window and which fraction of windows is removed.
pub fn recall_at_rejection(view: &CascadeView, images: &[AnnotatedImage], params: &DetectParams) -> Result<RecallRejection> {
    let mut total = RecallRejection::default();
    for item in images {
        let img = item.image.as_ref();
        let scan = scan_image(view, img, params)?;
        let (w, h) = (img.width(), img.height());
        let mut all = HashSet::new();
        for (si, level) in scan.levels.iter().enumerate() {
            for win in enumerate_windows(level.image.width(), level.image.height(), WINDOW_SIZE, params.stride, si)? {
                let s = Survivor {
                    window: win,
                    views: Default::default(),
                    score: 0.0,
                    shape: view.mean_shape,
                };
                all.insert(rounded_key(&to_detection(&s, level.scale, w, h).rect));
            }
        }
        let boxes: Vec<BoxF> = scan
            .survivors
            .iter()
            .map(|s| to_detection(s, scan.levels[s.window.scale_index].scale, w, h).rect)
            .collect();
        let distinct: HashSet<_> = boxes.iter().map(rounded_key).collect();
        let covered = item
            .truths
            .iter()
            .filter(|t| {
                let tb = rect_box(t);
                boxes.iter().any(|b| b.iou(&tb) >= MATCH_IOU)
            })
            .count();
        total.add(&RecallRejection {
            images: 1,
            faces: item.truths.len(),
            covered,
            grid_windows: scan.counters.windows,
            distinct_windows: all.len(),
            survivors: scan.survivors.len(),
            distinct_survivors: distinct.len(),
        });
    }
    Ok(total)
}

/// Runs `view` on a single 40x40 raster; `Some` if the window survives.
pub fn sample_survivor(view: &CascadeView, raster: &GrayImage) -> Result<Option<Survivor>> {
    if raster.width() != WINDOW_SIZE || raster.height() != WINDOW_SIZE {
        return Err(Error::input(format!(
            "sample rasters must be {WINDOW_SIZE}x{WINDOW_SIZE}, got {}x{}",
            raster.width(),
            raster.height()
        )));
    }
    let mut counters = StageCounters::default();
    let mut timings = StageTimings::default();
    let mut out = view.scan_level(raster, 0, 1, &mut counters, &mut timings)?;
    Ok(out.pop())
}

/// Fraction of rasters that survive `view`; 0 for an empty set.
pub fn sample_recall<I: AsRef<GrayImage>>(view: &CascadeView, rasters: &[I]) -> Result<f64> {
    if rasters.is_empty() {
        return Ok(0.0);
    }
    let mut kept = 0usize;
    for r in rasters {
        if sample_survivor(view, r.as_ref())?.is_some() {
            kept += 1;
        }
    }
    Ok(kept as f64 / rasters.len() as f64)
}
