//! Multi-view face detection with a funnel-structured cascade.
//!
//! Windows of an image pyramid pass three levels of classifiers:
//!
//! 1. one boosted LAB cascade per face view, whose accepted windows are
//!    united ([`cascade::union_propose`]);
//! 2. coarse MLP cascades on SURF descriptors, each serving one or more
//!    views ([`funnel::FunnelTopology`]);
//! 3. one unified fine MLP cascade on shape-indexed SIFT features that
//!    scores the window and refines four facial landmarks.
//!
//! [`training`] builds all of this from annotated images, [`evaluation`]
//! measures it, and [`synth`] renders procedural face data for experiments.

pub mod cascade;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod funnel;
pub mod imaging;
pub mod neural;
pub mod synth;
pub mod training;

pub use error::{Error, LoadError, Result};
pub use features::Shape4;
pub use funnel::{detect, load_model, nms, save_model, DetectParams, Detection, FunnelModel};
pub use imaging::{GrayImage, IntegralImage, WindowRect, WINDOW_SIZE};
