//! Detection/ground-truth matching and the ROC and PR curves built on it.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::Shape4;
use crate::funnel::detect::{BoxF, Detection};

/// Detections and ground truth of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub truths: Vec<BoxF>,
    /// Landmarks of each truth, normalised to its box, when annotated.
    pub truth_shapes: Vec<Option<Shape4>>,
    pub detections: Vec<Detection>,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<()> {
        if self.truth_shapes.len() != self.truths.len() {
            return Err(Error::input(format!("{}: one shape slot per truth is required", self.image_id)));
        }
        if let Some(d) = self.detections.iter().find(|d| !d.score.is_finite()) {
            return Err(Error::input(format!("{}: non-finite score {}", self.image_id, d.score)));
        }
        Ok(())
    }
}

/// Outcome of matching one image.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// Matched truth index for each detection, in input order; `None` is a
    /// false positive.
    pub detection_truth: Vec<Option<usize>>,
    pub truth_matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.detection_truth.iter().filter(|t| t.is_some()).count()
    }
}

/// Greedy one-to-one matching: detections in descending score order (ties
/// by input order) each take the unmatched truth of highest IoU, provided
/// that IoU reaches `iou_min`.
pub fn match_detections(dets: &[BoxF], scores: &[f64], truths: &[BoxF], iou_min: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut detection_truth = vec![None; dets.len()];
    let mut truth_matched = vec![false; truths.len()];
    for i in order {
        let mut best: Option<(f64, usize)> = None;
        for (t, tb) in truths.iter().enumerate() {
            if truth_matched[t] {
                continue;
            }
            let iou = dets[i].iou(tb);
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, t));
            }
        }
        if let Some((iou, t)) = best {
            if iou >= iou_min {
                truth_matched[t] = true;
                detection_truth[i] = Some(t);
            }
        }
    }
    MatchResult {
        detection_truth,
        truth_matched,
    }
}

/// Matches the detections of a record.
pub fn match_record(rec: &EvalRecord, iou_min: f64) -> MatchResult {
    let boxes: Vec<BoxF> = rec.detections.iter().map(|d| d.rect).collect();
    let scores: Vec<f64> = rec.detections.iter().map(|d| d.score).collect();
    match_detections(&boxes, &scores, &rec.truths, iou_min)
}

/// Counts at one score threshold (detections with `score >= threshold`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub truths: usize,
}

impl CurvePoint {
    pub fn recall(&self) -> f64 {
        if self.truths == 0 {
            0.0
        } else {
            self.true_positives as f64 / self.truths as f64
        }
    }

    pub fn precision(&self) -> f64 {
        let n = self.true_positives + self.false_positives;
        if n == 0 {
            1.0
        } else {
            self.true_positives as f64 / n as f64
        }
    }
}

/// Sweeps the threshold over every observed score, highest first. Matching
/// runs once per image; because it is greedy in score order, the matches
/// among detections above a threshold equal the matching of that subset.
pub fn sweep(records: &[EvalRecord], iou_min: f64) -> Result<Vec<CurvePoint>> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut truths = 0;
    for rec in records {
        rec.validate()?;
        truths += rec.truths.len();
        let m = match_record(rec, iou_min);
        scored.extend(rec.detections.iter().zip(&m.detection_truth).map(|(d, t)| (d.score, t.is_some())));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scored.len() {
        let t = scored[i].0;
        while i < scored.len() && scored[i].0 == t {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(CurvePoint {
            threshold: t,
            true_positives: tp,
            false_positives: fp,
            truths,
        });
    }
    Ok(out)
}

/// ROC curve as `(total false positives, recall)`, starting at `(0, 0)`.
pub fn roc_points(records: &[EvalRecord], iou_min: f64) -> Result<Vec<(f64, f64)>> {
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(sweep(records, iou_min)?.iter().map(|p| (p.false_positives as f64, p.recall())));
    Ok(pts)
}

/// Best recall reachable with at most `budget` false positives.
pub fn detection_rate_at(roc: &[(f64, f64)], budget: f64) -> f64 {
    roc.iter().filter(|p| p.0 <= budget).map(|p| p.1).fold(0.0, f64::max)
}

/// Precision-recall curve as `(recall, precision)`, one point per threshold.
pub fn pr_points(records: &[EvalRecord], iou_min: f64) -> Result<Vec<(f64, f64)>> {
    Ok(sweep(records, iou_min)?.iter().map(|p| (p.recall(), p.precision())).collect())
}

/// Trapezoid area under a PR curve; the curve is extended to recall 0 at
/// the precision of its first point.
pub fn pr_area(pr: &[(f64, f64)]) -> f64 {
    let Some(&(_, p0)) = pr.first() else {
        return 0.0;
    };
    let mut prev = (0.0, p0);
    let mut area = 0.0;
    for &(r, p) in pr {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    area
}

/// Two whitespace-separated columns, one point per line, then a summary
/// block of `# key: value` lines.
pub fn curve_text(header: (&str, &str), points: &[(f64, f64)], summary: &[(String, String)]) -> String {
    let mut s = format!("# {} {}\n", header.0, header.1);
    for (x, y) in points {
        let _ = writeln!(s, "{x} {y:.6}");
    }
    s.push_str("# summary\n");
    for (k, v) in summary {
        let _ = writeln!(s, "# {k}: {v}");
    }
    s
}
