//! Prints a model's architecture and checks that it reloads byte for byte.
//!
//! ```text
//! cargo run --release --example inspect_model -- [model.json]
//! ```
//!
//! Without a file, a randomly initialised model of the default shape is used.

use funnel_cascade::{load_model, FunnelModel, Result};

fn main() -> Result<()> {
    let model = match std::env::args().nth(1) {
        Some(p) => load_model(p)?,
        None => FunnelModel::random(0, 150),
    };
    print!("{}", model.summary());
    let text = model.to_json();
    let again = FunnelModel::from_json(&text)?.to_json();
    println!("{} bytes, reload identical: {}", text.len(), text == again);
    Ok(())
}
