//! End-to-end detection: pyramid scan, coordinate mapping and NMS.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::ViewSet;
use crate::error::{Error, Result};
use crate::features::shape::LANDMARKS;
use crate::funnel::model::FunnelModel;
use crate::funnel::scan::{CascadeView, ScanResult, StageCounters, StageTimings, Survivor};
use crate::imaging::{build_pyramid, GrayImage, PyramidLevel, PyramidParams, WINDOW_SIZE};

/// Scan and post-processing parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectParams {
    pub stride: usize,
    pub scale_factor: f64,
    pub min_face: usize,
    pub max_face: Option<usize>,
    pub nms_iou: f64,
    /// Added to every LAB cascade threshold.
    pub lab_threshold_offset: f64,
    /// Replaces the threshold of the last fine stage.
    pub final_threshold: Option<f64>,
    /// Worker threads for pyramid levels; 1 runs on the calling thread.
    pub threads: usize,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            stride: 2,
            scale_factor: 1.25,
            min_face: 40,
            max_face: None,
            nms_iou: 0.3,
            lab_threshold_offset: 0.0,
            final_threshold: None,
            threads: 1,
        }
    }
}

impl DetectParams {
    pub fn pyramid(&self) -> PyramidParams {
        PyramidParams {
            scale_factor: self.scale_factor,
            min_face: self.min_face,
            max_face: self.max_face,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pyramid().validate()?;
        if self.stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::config("NMS IoU must lie in (0, 1)"));
        }
        if !self.lab_threshold_offset.is_finite() {
            return Err(Error::config("LAB threshold offset must be finite"));
        }
        if let Some(t) = self.final_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("final threshold must lie in [0, 1]"));
            }
        }
        if self.threads == 0 {
            return Err(Error::config("threads must be at least 1"));
        }
        Ok(())
    }
}

/// Axis-aligned box in original-image pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxF {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl BoxF {
    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    pub fn iou(&self, o: &BoxF) -> f64 {
        let ix = (self.x + self.width).min(o.x + o.width) - self.x.max(o.x);
        let iy = (self.y + self.height).min(o.y + o.height) - self.y.max(o.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + o.area() - inter)
    }

    fn lex_cmp(&self, o: &BoxF) -> Ordering {
        self.x
            .total_cmp(&o.x)
            .then(self.y.total_cmp(&o.y))
            .then(self.width.total_cmp(&o.width))
            .then(self.height.total_cmp(&o.height))
    }
}

/// One detected face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub rect: BoxF,
    pub score: f64,
    /// Left eye, right eye, nose, mouth in original-image pixels.
    pub landmarks: [(f64, f64); LANDMARKS],
    pub views: ViewSet,
}

impl Detection {
    /// `x y w h score u1 v1 u2 v2 u3 v3 u4 v4 views`.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {} {} {} {:.6}",
            self.rect.x.round(),
            self.rect.y.round(),
            self.rect.width.round(),
            self.rect.height.round(),
            self.score
        );
        for (u, v) in &self.landmarks {
            let _ = write!(s, " {u:.6} {v:.6}");
        }
        let _ = write!(s, " {}", self.views);
        s
    }
}

/// Detections plus per-stage accounting.
#[derive(Clone, Debug, Default)]
pub struct DetectOutput {
    pub detections: Vec<Detection>,
    pub counters: StageCounters,
    pub timings: StageTimings,
}

impl DetectOutput {
    /// Multi-line per-stage breakdown.
    pub fn timing_report(&self) -> String {
        let c = &self.counters;
        let mut s = String::new();
        let _ = writeln!(s, "# timing (ms) and windows alive");
        for (name, d) in self.timings.stages() {
            let _ = writeln!(s, "# {name:<8} {:>10.3}", d.as_secs_f64() * 1e3);
        }
        let _ = writeln!(s, "# total    {:>10.3}", self.timings.total.as_secs_f64() * 1e3);
        let _ = writeln!(
            s,
            "# windows {} stage1 {} stage2 {} stage3a {} stage3 {} nms {}",
            c.windows, c.after_stage1, c.after_stage2, c.after_stage3a, c.after_stage3, c.after_nms
        );
        let _ = writeln!(s, "# levels {} lab_maps {}", c.levels, c.lab_maps_built);
        s
    }
}

/// Scans `img` with `view`, returning pre-NMS survivors and the levels.
pub fn scan_image(view: &CascadeView, img: &GrayImage, params: &DetectParams) -> Result<ScanResult> {
    params.validate()?;
    let mut timings = StageTimings::default();
    let t = Instant::now();
    let levels = build_pyramid(img, &params.pyramid())?;
    timings.pyramid = t.elapsed();

    let scan = |(si, level): (usize, &PyramidLevel)| -> Result<(Vec<Survivor>, StageCounters, StageTimings)> {
        let mut c = StageCounters::default();
        let mut t = StageTimings::default();
        let s = view.scan_level(&level.image, si, params.stride, &mut c, &mut t)?;
        Ok((s, c, t))
    };
    let per_level: Vec<_> = if params.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(params.threads)
            .build()
            .map_err(|e| Error::config(e.to_string()))?;
        pool.install(|| levels.par_iter().enumerate().map(scan).collect::<Result<Vec<_>>>())?
    } else {
        levels.iter().enumerate().map(scan).collect::<Result<Vec<_>>>()?
    };

    let mut counters = StageCounters::default();
    let mut survivors = Vec::new();
    for (s, c, t) in per_level {
        survivors.extend(s);
        counters.add(&c);
        timings.add(&t);
    }
    Ok(ScanResult {
        levels,
        survivors,
        counters,
        timings,
    })
}

/// Maps a survivor back to original-image pixels, clamped to the image.
pub fn to_detection(s: &Survivor, scale: f64, img_w: usize, img_h: usize) -> Detection {
    let side = WINDOW_SIZE as f64 / scale;
    let x0 = s.window.x as f64 / scale;
    let y0 = s.window.y as f64 / scale;
    let (w, h) = (img_w as f64, img_h as f64);
    let x = x0.clamp(0.0, w);
    let y = y0.clamp(0.0, h);
    let rect = BoxF {
        x,
        y,
        width: (x0 + side).min(w) - x,
        height: (y0 + side).min(h) - y,
    };
    let mut landmarks = [(0.0, 0.0); LANDMARKS];
    for (k, lm) in landmarks.iter_mut().enumerate() {
        let (u, v) = s.shape.point(k);
        *lm = (x0 + u * side, y0 + v * side);
    }
    Detection {
        rect,
        score: s.score,
        landmarks,
        views: s.views,
    }
}

/// Runs the full funnel on `img`.
///
/// An image too small for `min_face` yields no detections.
pub fn detect(model: &FunnelModel, img: &GrayImage, params: &DetectParams) -> Result<DetectOutput> {
    let start = Instant::now();
    let lab_adjusted;
    let fine_adjusted;
    let mut view = CascadeView::full(model);
    if params.lab_threshold_offset != 0.0 {
        lab_adjusted = model
            .lab_cascades
            .iter()
            .map(|c| c.with_threshold(c.threshold() + params.lab_threshold_offset))
            .collect::<Vec<_>>();
        view.lab = &lab_adjusted;
    }
    if let Some(t) = params.final_threshold {
        let mut fine = model.fine_cascade.clone();
        fine.last_mut().expect("validated model has fine stages").threshold = t;
        fine_adjusted = fine;
        view.fine = &fine_adjusted;
    }
    let scan = scan_image(&view, img, params)?;

    let mut dets: Vec<Detection> = scan
        .survivors
        .iter()
        .map(|s| to_detection(s, scan.levels[s.window.scale_index].scale, img.width(), img.height()))
        .collect();
    let mut counters = scan.counters;
    let mut timings = scan.timings;
    let t = Instant::now();
    dets = nms(dets, params.nms_iou);
    timings.nms = t.elapsed();
    counters.after_nms = dets.len();
    timings.total = start.elapsed();
    Ok(DetectOutput {
        detections: dets,
        counters,
        timings,
    })
}

/// Greedy non-maximum suppression: highest score first (ties by
/// lexicographic rect order); a detection is kept iff its IoU with every
/// kept detection is below `iou_threshold`.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.rect.lex_cmp(&b.rect)));
    let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
    for d in dets {
        if kept.iter().all(|k| k.rect.iou(&d.rect) < iou_threshold) {
            kept.push(d);
        }
    }
    kept
}
