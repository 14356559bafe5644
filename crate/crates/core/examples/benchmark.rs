//! Times each detection stage on the 640x480 reference scene.
//!
//! ```text
//! cargo run --release --example benchmark -- model.json [repetitions]
//! ```

use funnel_cascade::evaluation::{bench_detect, reference_image, reference_params};
use funnel_cascade::{load_model, Result};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next() else {
        eprintln!("usage: benchmark model.json [repetitions]  (train one with the train_synthetic example)");
        std::process::exit(2);
    };
    let model = load_model(path)?;
    let reps = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);
    let report = bench_detect(&model, &[reference_image(0)], &reference_params(), reps)?;
    print!("{report}");
    let (coarse, fine) = report.coarse_vs_fine();
    println!("stage 1+2: {:.2} ms, stage 3: {:.2} ms", coarse.as_secs_f64() * 1e3, fine.as_secs_f64() * 1e3);
    Ok(())
}
