//! Accuracy and speed measurement.

pub mod bench;
pub mod matching;
pub mod rejection;
pub mod run;
pub mod shape_error;

pub use bench::{bench_detect, reference_image, reference_params, BenchReport, MIN_REPETITIONS};
pub use matching::{
    curve_text, detection_rate_at, match_detections, match_record, pr_area, pr_points, roc_points, sweep, CurvePoint,
    EvalRecord, MatchResult,
};
pub use rejection::{recall_at_rejection, sample_recall, sample_survivor, AnnotatedImage, RecallRejection, MATCH_IOU};
pub use run::{evaluate, landmark_errors, load_ground_truth, predict_shape, refine_shape};
pub use shape_error::{face_shape_error, shape_error, ShapeErrorStats};
