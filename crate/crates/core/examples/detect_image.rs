//! Detects faces in a PGM image (or a generated scene) and writes an overlay.
//!
//! ```text
//! cargo run --release --example detect_image -- [model.json] [image.pgm]
//! ```
//!
//! Without a model a small one is trained on synthetic faces first.

use funnel_cascade::synth::{dataset, scene, SynthConfig};
use funnel_cascade::training::{train_funnel, FunnelTrainConfig};
use funnel_cascade::{cli::draw_overlay, detect, load_model, DetectParams, FunnelModel, GrayImage, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_model() -> Result<FunnelModel> {
    println!("no model given; training a small one on 200 synthetic faces");
    let data = dataset(&SynthConfig {
        faces: 200,
        negatives: 20,
        ..Default::default()
    });
    Ok(train_funnel(&data, &FunnelTrainConfig::default())?.0)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let model = match args.next() {
        Some(p) => load_model(p)?,
        None => quick_model()?,
    };
    let (image, truth) = match args.next() {
        Some(p) => (GrayImage::open(p)?, Vec::new()),
        None => {
            let s = scene(320, 240, 4, (40, 100), &mut ChaCha8Rng::seed_from_u64(5));
            (s.image, s.faces)
        }
    };
    let out = detect(&model, &image, &DetectParams::default())?;
    for d in &out.detections {
        println!("{}", d.to_line());
    }
    print!("{}", out.timing_report());
    for f in &truth {
        println!("# truth {} {} {} {} yaw {:.1}", f.rect.x, f.rect.y, f.rect.width, f.rect.height, f.yaw);
    }
    draw_overlay(&image, &out.detections).write_pgm("detections.pgm")?;
    println!("overlay written to detections.pgm");
    Ok(())
}
