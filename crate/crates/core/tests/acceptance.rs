//! End-to-end acceptance run: prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::fmt::Write as _;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::checks::{self, Check};
use funnel_cascade::evaluation::{
    bench_detect, detection_rate_at, evaluate, face_shape_error, landmark_errors, pr_area, pr_points, predict_shape,
    recall_at_rejection, reference_image, reference_params, roc_points, AnnotatedImage, RecallRejection, MATCH_IOU,
};
use funnel_cascade::funnel::CascadeView;
use funnel_cascade::neural::DEFAULT_LAMBDA;
use funnel_cascade::synth::{self, SynthConfig};
use funnel_cascade::training::{distort, train_funnel, Dataset, Distortion, FunnelTrainConfig, TrainReport};
use funnel_cascade::{save_model, DetectParams, FunnelModel, LoadError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TRAIN_SEED: u64 = 0;

struct HeldOut {
    dataset: Dataset,
    faces: Vec<AnnotatedImage>,
    negatives: Vec<AnnotatedImage>,
    scenes: Vec<AnnotatedImage>,
}

fn held_out() -> HeldOut {
    let dataset = synth::dataset(&SynthConfig {
        faces: 300,
        negatives: 30,
        negative_size: (320, 240),
        seed: 7777,
        ..SynthConfig::default()
    });
    let faces = dataset
        .positives
        .iter()
        .map(|p| AnnotatedImage {
            id: p.source.clone(),
            image: p.image.clone(),
            truths: vec![p.rect],
            shapes: vec![p.shape],
        })
        .collect();
    let negatives = dataset
        .negatives
        .iter()
        .map(|(id, img)| AnnotatedImage::negative(id.clone(), img.clone()))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8888);
    let scenes = (0..12)
        .map(|i| {
            let s = synth::scene(320, 240, 4, (40, 100), &mut rng);
            AnnotatedImage {
                id: format!("scene{i}"),
                image: Arc::new(s.image),
                truths: s.faces.iter().map(|f| f.rect).collect(),
                shapes: s.faces.iter().map(|f| Some(f.shape)).collect(),
            }
        })
        .collect();
    HeldOut {
        dataset,
        faces,
        negatives,
        scenes,
    }
}

fn training_set() -> Dataset {
    synth::dataset(&SynthConfig {
        faces: 600,
        negatives: 60,
        seed: 1,
        ..SynthConfig::default()
    })
}

fn train(ds: &Dataset, branches: Option<Vec<usize>>) -> Result<(FunnelModel, TrainReport, Duration), String> {
    let cfg = FunnelTrainConfig {
        seed: TRAIN_SEED,
        branches,
        ..FunnelTrainConfig::default()
    };
    let t = Instant::now();
    let (m, r) = train_funnel(ds, &cfg).map_err(|e| e.to_string())?;
    Ok((m, r, t.elapsed()))
}

fn both(view: &CascadeView, sets: &[&[AnnotatedImage]], params: &DetectParams) -> Result<RecallRejection, String> {
    let mut total = RecallRejection::default();
    for s in sets {
        total.add(&recall_at_rejection(view, s, params).map_err(|e| e.to_string())?);
    }
    Ok(total)
}

fn eval_summary(model: &FunnelModel, h: &HeldOut) -> Result<String, String> {
    let params = DetectParams::default();
    let records = evaluate(model, &h.scenes, &params).map_err(|e| e.to_string())?;
    let roc = roc_points(&records, MATCH_IOU).map_err(|e| e.to_string())?;
    let pr = pr_points(&records, MATCH_IOU).map_err(|e| e.to_string())?;
    let shapes = landmark_errors(&records, MATCH_IOU);
    let mut s = String::new();
    let _ = writeln!(s, "DR@100FPs {:.6}", detection_rate_at(&roc, 100.0));
    let _ = writeln!(s, "PR area {:.6}", pr_area(&pr));
    let _ = writeln!(s, "landmark error {:.6} over {}", shapes.mean, shapes.errors.len());
    for d in records.iter().flat_map(|r| &r.detections) {
        let _ = writeln!(s, "{}", d.to_line());
    }
    Ok(s)
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Check) -> Check {
    let t = Instant::now();
    let r = f();
    let el = t.elapsed();
    match (r, limit) {
        (Ok(m), Some(l)) if el > l => Err(format!("{m}; took {el:.1?}, limit {l:?}")),
        (Ok(m), _) => Ok(format!("{m}; {el:.1?}")),
        (Err(e), _) => Err(e),
    }
}

fn c3_configuration(model: &FunnelModel) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.json");
    save_model(model, &path).map_err(|e| e.to_string())?;
    let run = |format: &str| {
        Command::new(env!("CARGO_BIN_EXE_funnel"))
            .args(["inspect", "--model", path.to_str().unwrap(), "--format", format])
            .output()
            .map_err(|e| e.to_string())
    };
    let text = String::from_utf8_lossy(&run("text")?.stdout).into_owned();
    let v: serde_json::Value = serde_json::from_slice(&run("json")?.stdout).map_err(|e| e.to_string())?;
    let mut bad = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            bad.push(what.to_string());
        }
    };
    expect("5 LAB cascades x 150", v["lab_weak_per_view"] == serde_json::json!([150, 150, 150, 150, 150]));
    for b in v["coarse"].as_array().into_iter().flatten() {
        expect(
            "coarse layers 64-15-1 / 128-20-1 / 192-20-1",
            b["layers"] == serde_json::json!([[64, 15, 1], [128, 20, 1], [192, 20, 1]]),
        );
    }
    expect("3 coarse branches", v["coarse"].as_array().map(|a| a.len()) == Some(3));
    expect("2 fine stages 512-80-9", v["fine_layers"] == serde_json::json!([[512, 80, 9], [512, 80, 9]]));
    expect("lambda 0.125", v["lambda"].as_f64() == Some(0.125) && DEFAULT_LAMBDA == 0.125);
    expect("56 SURF patches", text.contains("SURF pool patches: 56"));
    expect(
        "SURF groups 2/4/6",
        text.contains("SURF groups 2 [") && text.contains("SURF groups 4 [") && text.contains("SURF groups 6 ["),
    );
    let d = FunnelTrainConfig::default();
    expect(
        "training defaults",
        d.coarse_groups == [2, 4, 6] && d.coarse_hidden == [15, 20, 20] && d.fine_hidden == 80 && d.fine_stages == 2,
    );
    if bad.is_empty() {
        Ok("inspect output matches the default architecture".into())
    } else {
        Err(format!("mismatch: {}", bad.join(", ")))
    }
}

fn c5_funnel(model: &FunnelModel, h: &HeldOut, train_time: Duration) -> Check {
    let t = Instant::now();
    let view = CascadeView::prefix(model, 0, 0);
    let params = DetectParams::default();
    let neg = recall_at_rejection(&view, &h.negatives, &params).map_err(|e| e.to_string())?;
    let faces = recall_at_rejection(&view, &h.faces, &params).map_err(|e| e.to_string())?;
    let recall = faces.recall().unwrap_or(0.0);
    let total = train_time + t.elapsed();
    let msg = format!(
        "stage 1 removes {:.4}% of {} windows on {} negative images (distinct-box basis {:.4}%), face recall {:.2}% ({}/{}), train+eval {:.0?}",
        100.0 * neg.removal(),
        neg.grid_windows,
        neg.images,
        100.0 * neg.distinct_removal(),
        100.0 * recall,
        faces.covered,
        faces.faces,
        total
    );
    if neg.removal() >= 0.99 && recall >= 0.95 && total <= Duration::from_secs(900) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c6_shapes(model: &FunnelModel, h: &HeldOut) -> Check {
    let (mut pred, mut base) = (0.0, 0.0);
    let mut n = 0;
    for p in &h.dataset.positives {
        let Some(truth) = p.shape else { continue };
        let raster = distort(&p.image, &p.rect, &Distortion::IDENTITY);
        let s = predict_shape(model, &raster);
        pred += face_shape_error(&s, &truth, 40.0, 40.0);
        base += face_shape_error(&model.mean_shape, &truth, 40.0, 40.0);
        n += 1;
    }
    let (pred, base) = (pred / n as f64, base / n as f64);
    let gain = 1.0 - pred / base;
    let msg = format!("mean error {pred:.4} vs mean-shape {base:.4} on {n} faces: {:.1}% lower", 100.0 * gain);
    if gain >= 0.30 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c7_topology(funnel: &FunnelModel, parallel: &FunnelModel, h: &HeldOut) -> Check {
    let params = DetectParams::default();
    let sets: [&[AnnotatedImage]; 2] = [&h.faces, &h.negatives];
    let mut lines = Vec::new();
    let mut ok = true;
    for (label, coarse, fine) in [("after coarse", 3, 0), ("full", 3, 2)] {
        let f = both(&CascadeView::prefix(funnel, coarse, fine), &sets, &params)?;
        let p = both(&CascadeView::prefix(parallel, coarse, fine), &sets, &params)?;
        let (fr, pr) = (f.recall().unwrap_or(0.0), p.recall().unwrap_or(0.0));
        lines.push(format!(
            "{label}: funnel {:.2} survivors/image at recall {:.4}, parallel {:.2} at {:.4}",
            f.survivors_per_image(),
            fr,
            p.survivors_per_image(),
            pr
        ));
        if label == "after coarse" {
            ok = f.survivors_per_image() <= p.survivors_per_image() && fr >= pr - 0.005;
        }
    }
    let msg = lines.join("; ");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn c9_serialization(model: &FunnelModel) -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    save_model(model, &a).map_err(|e| e.to_string())?;
    let loaded = funnel_cascade::load_model(&a).map_err(|e| e.to_string())?;
    save_model(&loaded, &b).map_err(|e| e.to_string())?;
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    if x != y {
        return Err("save-load-save changed the bytes".into());
    }
    let text = String::from_utf8(x).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cases: Vec<(&str, Result<FunnelModel, LoadError>, fn(&LoadError) -> bool)> = vec![
        ("truncated", FunnelModel::from_json(&text[..text.len() / 3]), |e| matches!(e, LoadError::Parse(_))),
        (
            "format",
            FunnelModel::from_json(&text.replacen("fust-model/1", "fust-model/0", 1)),
            |e| matches!(e, LoadError::Version { .. }),
        ),
        ("pool hash", {
            let mut w = v.clone();
            w["surf_pool_hash"] = "ab".into();
            FunnelModel::from_json(&w.to_string())
        }, |e| matches!(e, LoadError::PoolHash { .. })),
        ("invariant", {
            v["fine_cascade"][0]["model"]["layers"][1]["biases"].as_array_mut().unwrap().pop();
            FunnelModel::from_json(&v.to_string())
        }, |e| matches!(e, LoadError::Invariant(_))),
    ];
    for (name, r, class) in cases {
        match r {
            Err(e) if class(&e) => {}
            Err(e) => return Err(format!("{name}: wrong error class {e:?}")),
            Ok(_) => return Err(format!("{name}: corrupted file accepted")),
        }
    }
    Ok(format!("{} bytes identical after reload; 4 corruption classes rejected", y.len()))
}

fn c10_speed(model: &FunnelModel) -> Check {
    let img = reference_image(0);
    let r = bench_detect(model, &[img], &reference_params(), 5).map_err(|e| e.to_string())?;
    print!("{r}");
    let per = r.per_image();
    let (coarse, fine) = r.coarse_vs_fine();
    let c = r.counters;
    let into_fine = c.after_stage2;
    let small = into_fine * 100 <= c.windows;
    let msg = format!(
        "{per:.1?} per 640x480 image (stage 1+2 {coarse:.1?}, stage 3 {fine:.1?}, {into_fine} of {} windows reach stage 3)",
        c.windows
    );
    if per < Duration::from_millis(500) && (coarse <= fine || small) {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn report(results: &mut Vec<bool>, n: usize, name: &str, r: Check) {
    match r {
        Ok(m) => {
            println!("criterion {n:>2} PASS {name}: {m}");
            results.push(true);
        }
        Err(m) => {
            println!("criterion {n:>2} FAIL {name}: {m}");
            results.push(false);
        }
    }
}

fn main() {
    let mut results = Vec::new();

    report(&mut results, 1, "gradient check", timed(Some(Duration::from_secs(10)), || checks::gradients(10, 11)));
    report(
        &mut results,
        2,
        "integral/LAB/SURF/SIFT oracles",
        timed(Some(Duration::from_secs(30)), || {
            let parts = [
                checks::box_sums(100, 21)?,
                checks::lab_codes(100, 22)?,
                checks::surf_descriptors(200, 23)?,
                checks::sift_descriptors(200, 24)?,
            ];
            Ok(parts.join("; "))
        }),
    );
    report(&mut results, 4, "union semantics", timed(Some(Duration::from_secs(5)), || checks::union_semantics(50, 41)));
    report(&mut results, 8, "NMS properties", checks::nms_properties(1000, 81));

    let h = held_out();
    let ds = training_set();
    let trained = train(&ds, None);
    let (model, train_report, train_time) = match trained {
        Ok(t) => t,
        Err(e) => {
            for (n, name) in [(3, "configuration"), (5, "funnel"), (6, "shape"), (7, "topology"), (9, "serialization"), (10, "speed"), (11, "determinism")] {
                report(&mut results, n, name, Err(format!("training failed: {e}")));
            }
            std::process::exit(1);
        }
    };
    print!("{train_report}");
    println!("trained in {train_time:.1?}");

    report(&mut results, 3, "configuration conformance", c3_configuration(&model));
    report(&mut results, 5, "funnel removal and recall", c5_funnel(&model, &h, train_time));
    report(&mut results, 6, "shape refinement", c6_shapes(&model, &h));
    let parallel = train(&ds, Some(vec![3, 0, 1, 2, 4]));
    report(
        &mut results,
        7,
        "funnel vs parallel branches",
        parallel.and_then(|(p, _, _)| c7_topology(&model, &p, &h)),
    );
    report(&mut results, 9, "serialization", c9_serialization(&model));
    report(&mut results, 10, "performance smoke", c10_speed(&model));
    report(
        &mut results,
        11,
        "determinism",
        (|| {
            let (again, _, _) = train(&ds, None)?;
            if again.to_json() != model.to_json() {
                return Err("model files differ".to_string());
            }
            let (a, b) = (eval_summary(&model, &h)?, eval_summary(&again, &h)?);
            if a != b {
                return Err("evaluation summaries differ".into());
            }
            Ok(format!("identical {}-byte models and evaluation summaries", model.to_json().len()))
        })(),
    );

    let failed = results.iter().filter(|r| !**r).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
