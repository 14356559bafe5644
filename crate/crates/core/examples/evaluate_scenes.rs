//! Scores a model on generated multi-face scenes: ROC, PR and landmark error.
//!
//! ```text
//! cargo run --release --example evaluate_scenes -- model.json [scenes]
//! ```

use std::sync::Arc;

use funnel_cascade::evaluation::{
    detection_rate_at, evaluate, landmark_errors, pr_area, pr_points, recall_at_rejection, roc_points, AnnotatedImage,
    MATCH_IOU,
};
use funnel_cascade::funnel::CascadeView;
use funnel_cascade::synth::scene;
use funnel_cascade::{load_model, DetectParams, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next() else {
        eprintln!("usage: evaluate_scenes model.json [scenes]  (train one with the train_synthetic example)");
        std::process::exit(2);
    };
    let model = load_model(path)?;
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let images: Vec<AnnotatedImage> = (0..n)
        .map(|i| {
            let s = scene(320, 240, 4, (40, 100), &mut rng);
            AnnotatedImage {
                id: format!("scene{i}"),
                image: Arc::new(s.image),
                truths: s.faces.iter().map(|f| f.rect).collect(),
                shapes: s.faces.iter().map(|f| Some(f.shape)).collect(),
            }
        })
        .collect();
    let params = DetectParams::default();

    for (name, coarse, fine) in [("LAB union", 0, 0), ("+ coarse", 3, 0), ("+ fine", 3, 2)] {
        let r = recall_at_rejection(&CascadeView::prefix(&model, coarse, fine), &images, &params)?;
        println!(
            "{name:<10} recall {:.3}  removal {:.6}  survivors/image {:.1}",
            r.recall().unwrap_or(0.0),
            r.removal(),
            r.survivors_per_image()
        );
    }

    let records = evaluate(&model, &images, &params)?;
    let roc = roc_points(&records, MATCH_IOU)?;
    let pr = pr_points(&records, MATCH_IOU)?;
    let shapes = landmark_errors(&records, MATCH_IOU);
    println!("DR@100FPs {:.3}", detection_rate_at(&roc, 100.0));
    println!("PR area   {:.3}", pr_area(&pr));
    println!("landmark error {:.4} (fraction of face width) over {} faces", shapes.mean, shapes.errors.len());
    for e in [0.05, 0.1, 0.2] {
        println!("  within {e:.2}: {:.1}%", 100.0 * shapes.cdf(e));
    }
    Ok(())
}
