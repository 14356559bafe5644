//! Running a model over annotated images.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::cascade::{verify_mlp_stage, MlpStage};
use crate::error::Result;
use crate::evaluation::matching::{match_record, EvalRecord};
use crate::evaluation::rejection::{rect_box, AnnotatedImage};
use crate::evaluation::shape_error::{face_shape_error, ShapeErrorStats};
use crate::features::shape::{shape_indexed_features, Shape4, LANDMARKS};
use crate::funnel::detect::{detect, DetectParams};
use crate::funnel::model::FunnelModel;
use crate::imaging::GrayImage;
use crate::training::dataset::{read_manifest, ManifestEntry};

/// Groups the face records of a manifest by image and loads each image
/// once. Negative records become images without faces.
pub fn load_ground_truth(manifest: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    let mut by_image: BTreeMap<PathBuf, AnnotatedImage> = BTreeMap::new();
    for e in read_manifest(manifest)? {
        let (path, face) = match e {
            ManifestEntry::Positive { path, rect, shape, .. } => (path, Some((rect, shape))),
            ManifestEntry::Negative { path, .. } => (path, None),
        };
        if !by_image.contains_key(&path) {
            let image = Arc::new(GrayImage::open(&path)?);
            by_image.insert(path.clone(), AnnotatedImage::negative(path.display().to_string(), image));
        }
        let item = by_image.get_mut(&path).expect("inserted above");
        if let Some((rect, shape)) = face {
            item.truths.push(rect);
            item.shapes.push(shape);
        }
    }
    Ok(by_image.into_values().collect())
}

/// Detects on every image and pairs the results with the ground truth.
pub fn evaluate(model: &FunnelModel, images: &[AnnotatedImage], params: &DetectParams) -> Result<Vec<EvalRecord>> {
    images
        .iter()
        .map(|item| {
            let out = detect(model, &item.image, params)?;
            Ok(EvalRecord {
                image_id: item.id.clone(),
                truths: item.truths.iter().map(rect_box).collect(),
                truth_shapes: item.shapes.clone(),
                detections: out.detections,
            })
        })
        .collect()
}

/// Landmark errors of detections matched to annotated faces.
pub fn landmark_errors(records: &[EvalRecord], iou_min: f64) -> ShapeErrorStats {
    let mut errors = Vec::new();
    for rec in records {
        let m = match_record(rec, iou_min);
        for (d, t) in rec.detections.iter().zip(&m.detection_truth) {
            let Some(t) = *t else { continue };
            let Some(truth) = rec.truth_shapes[t] else { continue };
            let b = rec.truths[t];
            let mut pts = [(0.0, 0.0); LANDMARKS];
            for (p, &(x, y)) in pts.iter_mut().zip(&d.landmarks) {
                *p = ((x - b.x) / b.width, (y - b.y) / b.height);
            }
            errors.push(face_shape_error(&Shape4::from_points(pts), &truth, b.width, b.height));
        }
    }
    ShapeErrorStats::from_errors(errors)
}

/// Shape after running `stages` on a 40x40 raster from `start`, ignoring
/// their accept decisions.
pub fn refine_shape(stages: &[MlpStage], raster: &GrayImage, start: Shape4) -> Shape4 {
    let mut shape = start;
    for st in stages {
        let x = shape_indexed_features(raster, &shape);
        if let Ok(out) = verify_mlp_stage(st, &x) {
            if let Some(s) = out.shape {
                shape = s;
            }
        }
    }
    shape
}

/// The fine cascade's shape for a face raster, starting at the mean shape.
pub fn predict_shape(model: &FunnelModel, raster: &GrayImage) -> Shape4 {
    refine_shape(&model.fine_cascade, raster, model.mean_shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::ViewSet;
    use crate::funnel::detect::{BoxF, Detection};
    use crate::training::dataset::write_dataset;

    #[test]
    fn ground_truth_groups_faces_by_image() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let scene = crate::synth::scene(200, 150, 3, (40, 60), &mut rng);
        let image = Arc::new(scene.image);
        let ds = crate::training::Dataset {
            positives: scene
                .faces
                .iter()
                .map(|f| crate::training::PositiveRecord {
                    image: image.clone(),
                    rect: f.rect,
                    yaw: f.yaw,
                    shape: Some(f.shape),
                    source: String::new(),
                })
                .collect(),
            negatives: vec![("n".into(), Arc::new(GrayImage::filled(50, 50, 9).unwrap()))],
        };
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &ds).unwrap();
        let gt = load_ground_truth(&m).unwrap();
        assert_eq!(gt.len(), 2);
        let faces: usize = gt.iter().map(|g| g.truths.len()).sum();
        assert_eq!(faces, scene.faces.len());
        assert!(gt.iter().any(|g| g.truths.is_empty()));
    }

    #[test]
    fn landmark_error_of_exact_detection_is_zero() {
        let truth = Shape4::from_points([(0.3, 0.4), (0.7, 0.4), (0.5, 0.6), (0.5, 0.8)]);
        let b = BoxF {
            x: 10.0,
            y: 20.0,
            width: 50.0,
            height: 50.0,
        };
        let mut lm = [(0.0, 0.0); 4];
        for (k, p) in lm.iter_mut().enumerate() {
            let (u, v) = truth.point(k);
            *p = (b.x + u * 50.0, b.y + v * 50.0);
        }
        let rec = EvalRecord {
            image_id: "x".into(),
            truths: vec![b],
            truth_shapes: vec![Some(truth)],
            detections: vec![Detection {
                rect: b,
                score: 0.9,
                landmarks: lm,
                views: ViewSet::EMPTY,
            }],
        };
        let st = landmark_errors(&[rec], 0.5);
        assert_eq!(st.errors.len(), 1);
        assert!(st.mean < 1e-12);
    }

    #[test]
    fn refine_without_stages_keeps_start() {
        let s = Shape4::from_points([(0.3, 0.4), (0.7, 0.4), (0.5, 0.6), (0.5, 0.8)]);
        let img = GrayImage::filled(40, 40, 100).unwrap();
        assert_eq!(refine_shape(&[], &img, s), s);
        let m = FunnelModel::random(2, 2);
        let p = predict_shape(&m, &img);
        assert!(p.is_finite());
    }
}
