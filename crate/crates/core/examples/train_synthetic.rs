//! Trains a funnel on procedurally rendered faces and saves it.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [out.json] [faces] [seed]
//! ```

use std::time::Instant;

use funnel_cascade::synth::{dataset, SynthConfig};
use funnel_cascade::training::{train_funnel, FunnelTrainConfig};
use funnel_cascade::{save_model, Result};

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "synthetic-model.json".into());
    let faces = args.next().and_then(|a| a.parse().ok()).unwrap_or(600);
    let seed = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);

    let data = dataset(&SynthConfig {
        faces,
        seed,
        ..Default::default()
    });
    let cfg = FunnelTrainConfig {
        seed,
        ..Default::default()
    };
    let start = Instant::now();
    let (model, report) = train_funnel(&data, &cfg)?;
    println!("{report}");
    println!("trained in {:.1} s", start.elapsed().as_secs_f64());
    save_model(&model, &out)?;
    println!("model written to {out}");
    Ok(())
}
