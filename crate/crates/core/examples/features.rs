//! Computes LAB codes, SURF and shape-indexed SIFT features on one
//! synthetic face window.
//!
//! ```text
//! cargo run --release --example features
//! ```

use funnel_cascade::features::{
    compute_lab_map, default_surf_pool, shape_indexed_features, surf_descriptor, DEFAULT_BLOCK_SIZES, SHAPE_FEATURE_DIM,
};
use funnel_cascade::synth::face_image;
use funnel_cascade::training::{distort, Distortion};
use funnel_cascade::{IntegralImage, Result, WindowRect};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scene = face_image(64, 44, 0.0, &mut rng);
    let face = &scene.faces[0];
    let window = distort(&scene.image, &face.rect, &Distortion::IDENTITY);
    window.write_pgm("face-window.pgm")?;

    let map = compute_lab_map(&window, &DEFAULT_BLOCK_SIZES)?;
    println!("LAB codes along row 16 (4x4 blocks):");
    let row: Vec<String> = (0..=28).map(|x| format!("{:02x}", map.code(x, 16, 0))).collect();
    println!("  {}", row.join(" "));

    let ii = IntegralImage::new(&window);
    let pool = default_surf_pool();
    let w = WindowRect::canonical(0, 0, 0);
    println!("SURF pool: {} patches", pool.len());
    for p in pool.iter().take(3) {
        let d = surf_descriptor(&ii, &w, p)?;
        let head: Vec<String> = d[..6].iter().map(|v| format!("{v:+.3}")).collect();
        println!("  patch {:>2},{:>2} {}x{}: {} ...", p.x, p.y, p.width, p.height, head.join(" "));
    }

    let x = shape_indexed_features(&window, &face.shape);
    let nonzero = x.iter().filter(|v| **v != 0.0).count();
    println!("shape-indexed SIFT: {} values ({nonzero} non-zero) at landmarks", SHAPE_FEATURE_DIM);
    for k in 0..4 {
        let (u, v) = face.shape.point(k);
        println!("  landmark {k}: ({u:.3}, {v:.3})");
    }
    println!("window written to face-window.pgm");
    Ok(())
}
