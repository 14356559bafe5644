//! Writes a synthetic training set (PGM files plus manifest) for the CLI.
//!
//! ```text
//! cargo run --release --example synth_dataset -- [dir] [faces] [negatives]
//! funnel train --manifest dir/manifest.txt --out model.json
//! ```

use funnel_cascade::synth::{dataset, SynthConfig};
use funnel_cascade::training::{partition_views, write_dataset, ViewScheme};
use funnel_cascade::Result;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = args.next().unwrap_or_else(|| "synthetic-data".into());
    let faces = args.next().and_then(|a| a.parse().ok()).unwrap_or(600);
    let negatives = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let ds = dataset(&SynthConfig {
        faces,
        negatives,
        ..Default::default()
    });
    let yaws: Vec<f64> = ds.positives.iter().map(|p| p.yaw).collect();
    let views = partition_views(&yaws, &ViewScheme::Five)?;
    for (v, members) in views.iter().enumerate() {
        println!("view {v}: {} faces", members.len());
    }
    let manifest = write_dataset(&dir, &ds)?;
    println!("wrote {} faces and {} negative images; manifest {}", ds.positives.len(), ds.negatives.len(), manifest.display());
    Ok(())
}
