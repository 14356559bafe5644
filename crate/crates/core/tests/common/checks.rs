//! Oracle comparisons, each returning a description of the first mismatch.

use funnel_cascade::cascade::{union_propose, LabCascadeModel, LabWeakClassifier, ViewSet};
use funnel_cascade::features::{
    compute_lab_map, sift_descriptor, surf_descriptor, LabFeatureLocator, SurfPatch, DEFAULT_SIFT_RADIUS,
};
use funnel_cascade::funnel::BoxF;
use funnel_cascade::imaging::{enumerate_windows, Rect};
use funnel_cascade::neural::{gradient, Example, Head, MlpModel, Objective, DEFAULT_LAMBDA};
use funnel_cascade::{nms, Detection, IntegralImage, Shape4, WindowRect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

pub fn box_sums(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes = 0;
    for t in 0..trials {
        let (w, h) = (rng.gen_range(1..60), rng.gen_range(1..60));
        let img = random_image(w, h, &mut rng);
        let ii = IntegralImage::new(&img);
        for _ in 0..20 {
            let x = rng.gen_range(0..w);
            let y = rng.gen_range(0..h);
            let bw = rng.gen_range(0..=w - x);
            let bh = rng.gen_range(0..=h - y);
            let got = ii.box_sum(Rect::new(x, y, bw, bh)).map_err(|e| e.to_string())?;
            let want = pixel_sum(&img, x, y, bw, bh);
            if got != want {
                return Err(format!("trial {t}: box ({x},{y},{bw},{bh}) gave {got}, oracle {want}"));
            }
            boxes += 1;
        }
        if ii.box_sum(Rect::new(0, 0, w + 1, h)).is_ok() {
            return Err(format!("trial {t}: box outside the image was accepted"));
        }
    }
    Ok(format!("{boxes} boxes over {trials} images"))
}

pub fn lab_codes(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut codes = 0;
    for t in 0..trials {
        let blocks = [(rng.gen_range(1..6), rng.gen_range(1..6)), (rng.gen_range(2..9), rng.gen_range(2..9))];
        let (w, h) = (rng.gen_range(27..60), rng.gen_range(27..60));
        let img = random_image(w, h, &mut rng);
        let map = compute_lab_map(&img, &blocks).map_err(|e| e.to_string())?;
        for (k, &(bw, bh)) in blocks.iter().enumerate() {
            for y in 0..=h - 3 * bh {
                for x in 0..=w - 3 * bw {
                    let want = lab_code(&img, x, y, bw, bh);
                    if map.code(x, y, k) != want {
                        return Err(format!("trial {t}: code at ({x},{y}) block {bw}x{bh} is {}, oracle {want}", map.code(x, y, k)));
                    }
                    codes += 1;
                }
            }
        }
    }
    Ok(format!("{codes} codes over {trials} images"))
}

fn random_patch(rng: &mut impl Rng) -> SurfPatch {
    let width = rng.gen_range(4..=40);
    let height = rng.gen_range(4..=40);
    SurfPatch {
        x: rng.gen_range(0..=40 - width),
        y: rng.gen_range(0..=40 - height),
        width,
        height,
    }
}

pub fn surf_descriptors(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let (w, h) = (rng.gen_range(40..80), rng.gen_range(40..80));
        let img = random_image(w, h, &mut rng);
        let ii = IntegralImage::new(&img);
        let win = WindowRect::canonical(rng.gen_range(0..=w - 40), rng.gen_range(0..=h - 40), 0);
        let patch = random_patch(&mut rng);
        let got = surf_descriptor(&ii, &win, &patch).map_err(|e| e.to_string())?;
        let want = surf(&img, win.x, win.y, 40, (patch.x, patch.y, patch.width, patch.height));
        for (k, (g, o)) in got.iter().zip(&want).enumerate() {
            let d = (g - o).abs();
            worst = worst.max(d);
            if d > 1e-9 {
                return Err(format!("trial {t}: component {k} of {patch:?} is {g}, oracle {o}"));
            }
        }
    }
    Ok(format!("{trials} descriptors, max deviation {worst:.2e}"))
}

pub fn sift_descriptors(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for t in 0..trials {
        let img = random_image(40, 40, &mut rng);
        let (u, v) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let radius = if t % 2 == 0 { DEFAULT_SIFT_RADIUS } else { rng.gen_range(3.0..12.0) };
        let got = sift_descriptor(&img, (u, v), radius);
        let want = sift(&img, u, v, radius);
        for (k, (g, o)) in got.iter().zip(&want).enumerate() {
            let d = (g - o).abs();
            worst = worst.max(d);
            if d > 1e-9 {
                return Err(format!("trial {t}: component {k} at ({u:.3},{v:.3}) r={radius:.2} is {g}, oracle {o}"));
            }
        }
    }
    Ok(format!("{trials} descriptors, max deviation {worst:.2e}"))
}

fn random_shape(rng: &mut impl Rng) -> Shape4 {
    let mut p = [(0.0, 0.0); 4];
    for q in &mut p {
        *q = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
    }
    Shape4::from_points(p)
}

/// Compares analytic and central-difference gradients on `nets` random
/// networks per architecture. Large layers are checked on a random subset
/// of their weights; every bias is checked.
pub fn gradients(nets: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let archs: [(&[usize], Head, Objective); 5] = [
        (&[64, 15, 1], Head::Plain, Objective::Plain),
        (&[128, 20, 1], Head::Plain, Objective::Plain),
        (&[192, 20, 1], Head::Plain, Objective::Plain),
        (&[512, 80, 9], Head::Joint, Objective::Joint { lambda: DEFAULT_LAMBDA }),
        (&[7, 5, 4, 9], Head::Joint, Objective::Joint { lambda: DEFAULT_LAMBDA }),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (dims, head, obj) in archs {
        for n in 0..nets {
            let model = MlpModel::random(dims, head, 0.5, &mut rng).map_err(|e| e.to_string())?;
            let batch: Vec<Example> = (0..4)
                .map(|i| Example {
                    features: (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    label: (i % 2) as f64,
                    shape: (head == Head::Joint && (i % 2 == 1 || i == 0)).then(|| random_shape(&mut rng)),
                })
                .collect();
            let (g, _) = gradient(&model, &batch, obj).map_err(|e| e.to_string())?;
            for (li, layer) in g.layers.iter().enumerate() {
                let mut idx: Vec<(bool, usize)> = (0..layer.biases.len()).map(|i| (true, i)).collect();
                if layer.weights.len() <= 400 {
                    idx.extend((0..layer.weights.len()).map(|i| (false, i)));
                } else {
                    idx.extend((0..200).map(|_| (false, rng.gen_range(0..layer.weights.len()))));
                }
                for (bias, i) in idx {
                    let a = if bias { layer.biases[i] } else { layer.weights[i] };
                    let num = numeric_partial(&model, &batch, obj, li, bias, i, 1e-5);
                    let scale = a.abs().max(num.abs());
                    let rel = if scale < 1e-7 { (a - num).abs() } else { (a - num).abs() / scale };
                    worst = worst.max(rel);
                    checked += 1;
                    if rel >= 1e-4 {
                        return Err(format!(
                            "{dims:?} net {n} layer {li} {} {i}: analytic {a:e}, numeric {num:e}",
                            if bias { "bias" } else { "weight" }
                        ));
                    }
                }
            }
        }
    }
    Ok(format!("{checked} partials, worst relative error {worst:.2e}"))
}

fn constant_cascade(view: usize, accept: bool) -> LabCascadeModel {
    let weak = vec![LabWeakClassifier {
        locator: LabFeatureLocator {
            dx: 0,
            dy: 0,
            block_size_index: 0,
        },
        lut: vec![0.0; 256],
    }];
    LabCascadeModel::new(view, weak, if accept { -1.0 } else { 1.0 }).unwrap()
}

fn random_cascade(view: usize, rng: &mut impl Rng) -> LabCascadeModel {
    let weak = (0..rng.gen_range(1..6))
        .map(|_| {
            let bs = rng.gen_range(0..2);
            let side = if bs == 0 { 4 } else { 8 };
            LabWeakClassifier {
                locator: LabFeatureLocator {
                    dx: rng.gen_range(0..=40 - 3 * side),
                    dy: rng.gen_range(0..=40 - 3 * side),
                    block_size_index: bs,
                },
                lut: (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            }
        })
        .collect();
    LabCascadeModel::new(view, weak, rng.gen_range(-0.5..0.5)).unwrap()
}

/// Union semantics for three views: every accept/reject combination, then
/// monotonicity when views are added to random cascade sets.
pub fn union_semantics(models: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = random_image(60, 50, &mut rng);
    let map = compute_lab_map(&img, &[(4, 4), (8, 8)]).map_err(|e| e.to_string())?;
    let windows: Vec<WindowRect> = enumerate_windows(60, 50, 40, 2, 0).map_err(|e| e.to_string())?.collect();
    for mask in 0u32..8 {
        let cascades: Vec<_> = (0..3).map(|v| constant_cascade(v, mask & (1 << v) != 0)).collect();
        let out = union_propose(&cascades, &map, windows.iter().copied());
        let expect: ViewSet = (0..3).filter(|v| mask & (1 << v) != 0).collect();
        if mask == 0 && !out.is_empty() {
            return Err("all views rejecting still proposed windows".into());
        }
        if mask != 0 && (out.len() != windows.len() || out.iter().any(|p| p.views != expect)) {
            return Err(format!("mask {mask:03b}: expected every window tagged {expect}"));
        }
    }
    for m in 0..models {
        let all: Vec<_> = (0..5).map(|v| random_cascade(v, &mut rng)).collect();
        let mut prev: Vec<WindowRect> = Vec::new();
        for k in 0..=all.len() {
            let out: Vec<WindowRect> = union_propose(&all[..k], &map, windows.iter().copied()).iter().map(|p| p.window).collect();
            if !prev.iter().all(|w| out.contains(w)) {
                return Err(format!("model {m}: adding view {} dropped a survivor", k - 1));
            }
            for w in &windows {
                let any = all[..k].iter().any(|c| c.accepts(&map, w));
                if any != out.contains(w) {
                    return Err(format!("model {m}: survivor set differs from the OR of {k} views"));
                }
            }
            prev = out;
        }
    }
    Ok(format!("8 combinations, {models} random models"))
}

fn det(b: (f64, f64, f64, f64), score: f64) -> Detection {
    Detection {
        rect: BoxF {
            x: b.0,
            y: b.1,
            width: b.2,
            height: b.3,
        },
        score,
        landmarks: [(0.0, 0.0); 4],
        views: ViewSet::EMPTY,
    }
}

/// Reference NMS: repeatedly take the best remaining detection (score,
/// then smallest x, y, w, h) and drop everything overlapping it.
pub fn brute_nms(dets: &[Detection], thr: f64) -> Vec<Detection> {
    let mut rest: Vec<Detection> = dets.to_vec();
    let mut kept = Vec::new();
    while !rest.is_empty() {
        let mut best = 0;
        for i in 1..rest.len() {
            let (a, b) = (&rest[i], &rest[best]);
            let ka = (a.rect.x, a.rect.y, a.rect.width, a.rect.height);
            let kb = (b.rect.x, b.rect.y, b.rect.width, b.rect.height);
            if a.score > b.score || (a.score == b.score && ka < kb) {
                best = i;
            }
        }
        let d = rest.remove(best);
        let r = (d.rect.x, d.rect.y, d.rect.width, d.rect.height);
        rest.retain(|o| iou(r, (o.rect.x, o.rect.y, o.rect.width, o.rect.height)) < thr);
        kept.push(d);
    }
    kept
}

pub fn random_detections(rng: &mut impl Rng, max: usize) -> Vec<Detection> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| {
            let s = rng.gen_range(5.0..30.0_f64).round();
            det(
                (rng.gen_range(0.0..40.0_f64).round(), rng.gen_range(0.0..40.0_f64).round(), s, s),
                (rng.gen_range(0.0..1.0_f64) * 8.0).round() / 8.0,
            )
        })
        .collect()
}

pub fn nms_properties(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..trials {
        let dets = random_detections(&mut rng, 10);
        let thr = [0.3, 0.5, 0.7][t % 3];
        let once = nms(dets.clone(), thr);
        let twice = nms(once.clone(), thr);
        if once != twice {
            return Err(format!("trial {t}: not idempotent"));
        }
        if once != brute_nms(&dets, thr) {
            return Err(format!("trial {t}: differs from the reference on {} detections", dets.len()));
        }
    }
    Ok(format!("{trials} random sets of up to 10 detections"))
}
