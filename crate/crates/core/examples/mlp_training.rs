//! Trains a joint classification and shape-regression MLP on toy data and
//! checks its gradient against finite differences.
//!
//! ```text
//! cargo run --release --example mlp_training
//! ```

use funnel_cascade::neural::{gradient, loss, train_joint_mlp, Example, Objective, TrainConfig, DEFAULT_LAMBDA};
use funnel_cascade::{Result, Shape4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    // Positives: the first two inputs encode a shape offset; negatives are noise.
    let mut x = Vec::new();
    let mut labels = Vec::new();
    let mut shapes = Vec::new();
    for i in 0..400 {
        let face = i % 2 == 0;
        let (a, b) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut f: Vec<f64> = (0..16).map(|_| rng.gen_range(-0.2..0.2)).collect();
        if face {
            f[0] = a;
            f[1] = b;
            f[2] = 1.0;
        }
        x.push(f);
        labels.push(if face { 1.0 } else { 0.0 });
        shapes.push(face.then(|| {
            Shape4::from_points([
                (0.3 + 0.1 * a, 0.4 + 0.05 * b),
                (0.7 + 0.1 * a, 0.4 + 0.05 * b),
                (0.5 + 0.1 * a, 0.6),
                (0.5 + 0.1 * a, 0.78),
            ])
        }));
    }
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 2.0,
        ..TrainConfig::default()
    };
    let (model, log) = train_joint_mlp(&x, &labels, &shapes, &[12], &cfg)?;
    println!("loss {:.5} -> {:.5} (best epoch {})", log.initial_loss, log.best_loss, log.best_epoch);

    let mut acts = Default::default();
    let correct = x
        .iter()
        .zip(&labels)
        .filter(|(f, l)| (model.class_score(f, &mut acts) >= 0.5) == (**l >= 0.5))
        .count();
    println!("training accuracy {:.1}%", 100.0 * correct as f64 / x.len() as f64);

    let batch: Vec<Example> = (0..4)
        .map(|i| Example {
            features: x[i].clone(),
            label: labels[i],
            shape: shapes[i],
        })
        .collect();
    let obj = Objective::Joint { lambda: DEFAULT_LAMBDA };
    let (g, _) = gradient(&model, &batch, obj)?;
    let h = 1e-6;
    let mut plus = model.clone();
    plus.layers_mut()[0].biases[0] += h;
    let mut minus = model.clone();
    minus.layers_mut()[0].biases[0] -= h;
    let numeric = (loss(&plus, &batch, obj)? - loss(&minus, &batch, obj)?) / (2.0 * h);
    println!("d loss / d b0: analytic {:.8}, numeric {:.8}", g.layers[0].biases[0], numeric);
    Ok(())
}
