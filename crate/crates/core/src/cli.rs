//! The `funnel` command line.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 a file could
//! not be read or written, 3 a manifest, image or model file is malformed,
//! 4 training failed.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::evaluation::{
    bench_detect, curve_text, detection_rate_at, evaluate, landmark_errors, load_ground_truth, pr_area, pr_points,
    recall_at_rejection, reference_image, reference_params, roc_points, sweep, MATCH_IOU,
};
use crate::funnel::scan::CascadeView;
use crate::funnel::{detect, load_model, save_model, DetectParams, Detection};
use crate::imaging::GrayImage;
use crate::training::{load_dataset, train_funnel, write_dataset, Dataset, FunnelTrainConfig, PositiveRecord, ViewScheme};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_MALFORMED: i32 = 3;
pub const EXIT_TRAINING: i32 = 4;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Config(_) => EXIT_INVALID,
        Error::Io { .. } => EXIT_IO,
        Error::Parse { .. } | Error::Model(_) => EXIT_MALFORMED,
        Error::Training { .. } => EXIT_TRAINING,
    }
}

#[derive(Parser, Debug)]
#[command(name = "funnel", version, about = "Multi-view face detection with a funnel-structured cascade")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model from a manifest.
    Train(TrainArgs),
    /// Detect faces in images.
    Detect(DetectArgs),
    /// Score detections against ground truth.
    Eval(EvalArgs),
    /// Time each detection stage.
    Bench(BenchArgs),
    /// Print a model's architecture.
    Inspect(InspectArgs),
    /// Write a synthetic dataset with its manifest.
    Synth(SynthArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Curve {
    Roc,
    Pr,
}

/// Scan and post-processing flags shared by several subcommands.
#[derive(Args, Debug, Clone)]
pub struct ScanArgs {
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    #[arg(long, default_value_t = 1.25)]
    pub scale_factor: f64,
    #[arg(long, default_value_t = 40)]
    pub min_face: usize,
    #[arg(long)]
    pub max_face: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub nms_iou: f64,
    /// Added to every LAB cascade threshold.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub lab_offset: f64,
    /// Replaces the threshold of the last fine stage.
    #[arg(long)]
    pub final_threshold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl ScanArgs {
    pub fn params(&self) -> DetectParams {
        DetectParams {
            stride: self.stride,
            scale_factor: self.scale_factor,
            min_face: self.min_face,
            max_face: self.max_face,
            nms_iou: self.nms_iou,
            lab_threshold_offset: self.lab_offset,
            final_threshold: self.final_threshold,
            threads: self.threads,
        }
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// `5`, `2` or `custom:<b0>,<b1>,..`.
    #[arg(long, default_value = "5")]
    pub views: String,
    /// Comma-separated branch id per view (default: scheme routing).
    #[arg(long)]
    pub branches: Option<String>,
    #[arg(long, default_value_t = 4)]
    pub augment: usize,
    /// Also write the training report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for per-image result files (and overlays).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write a copy of each image with boxes and landmarks drawn in.
    #[arg(long)]
    pub overlay: bool,
    /// Append the per-stage timing block.
    #[arg(long)]
    pub timing: bool,
    #[command(flatten)]
    pub scan: ScanArgs,
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Ground truth: a manifest whose `P` records list the faces.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Curve::Roc)]
    pub curve: Curve,
    /// Curve file to write (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub scan: ScanArgs,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Images to time; without any, a synthetic 640x480 scene is used.
    pub images: Vec<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub min_face: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 600)]
    pub faces: usize,
    #[arg(long, default_value_t = 60)]
    pub negatives: usize,
    /// Instead of single-face crops, write this many multi-face scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file")))
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let scheme: ViewScheme = a.views.parse()?;
    let branches = a
        .branches
        .as_ref()
        .map(|s| {
            s.split(',')
                .map(|b| b.trim().parse::<usize>().map_err(|_| Error::config(format!("bad branch id {b:?}"))))
                .collect::<Result<Vec<usize>>>()
        })
        .transpose()?;
    let cfg = FunnelTrainConfig {
        seed: a.seed,
        scheme,
        branches,
        augment_factor: a.augment,
        threads: a.threads,
        ..Default::default()
    };
    cfg.validate()?;
    require_file(&a.manifest)?;
    let ds = load_dataset(&a.manifest)?;
    let (model, report) = train_funnel(&ds, &cfg)?;
    save_model(&model, &a.out)?;
    let text = report.to_string();
    if let Some(p) = &a.report {
        write_file(p, &text)?;
    }
    print!("{text}");
    println!("model written to {}", a.out.display());
    Ok(EXIT_OK)
}

fn detections_json(path: &Path, dets: &[Detection]) -> serde_json::Value {
    json!({
        "image": path.display().to_string(),
        "detections": dets.iter().map(|d| json!({
            "x": d.rect.x.round(),
            "y": d.rect.y.round(),
            "w": d.rect.width.round(),
            "h": d.rect.height.round(),
            "score": d.score,
            "landmarks": d.landmarks.iter().map(|&(u, v)| [u, v]).collect::<Vec<_>>(),
            "views": d.views.iter().collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
    })
}

/// Copy of `img` with each box outlined in white and landmarks as dots.
pub fn draw_overlay(img: &GrayImage, dets: &[Detection]) -> GrayImage {
    let mut out = img.clone();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut put = |x: i64, y: i64, v: u8| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            out.set(x as usize, y as usize, v);
        }
    };
    for d in dets {
        let x0 = d.rect.x.round() as i64;
        let y0 = d.rect.y.round() as i64;
        let x1 = (d.rect.x + d.rect.width).round() as i64 - 1;
        let y1 = (d.rect.y + d.rect.height).round() as i64 - 1;
        for x in x0..=x1 {
            put(x, y0, 255);
            put(x, y1, 255);
        }
        for y in y0..=y1 {
            put(x0, y, 255);
            put(x1, y, 255);
        }
        for &(u, v) in &d.landmarks {
            let (cx, cy) = (u.round() as i64, v.round() as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    put(cx + dx, cy + dy, if dx == 0 && dy == 0 { 255 } else { 0 });
                }
            }
        }
    }
    out
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_detect(a: &DetectArgs) -> Result<i32> {
    let params = a.scan.params();
    params.validate()?;
    if a.overlay && a.out.is_none() {
        return Err(Error::config("--overlay needs --out"));
    }
    let model = load_model(&a.model)?;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut status = EXIT_OK;
    let mut json_items = Vec::new();
    let mut stdout = String::new();
    for path in &a.images {
        let result = GrayImage::open(path).and_then(|img| detect(&model, &img, &params).map(|out| (img, out)));
        let (img, out) = match result {
            Ok(r) => r,
            Err(e) => {
                let msg = e.to_string();
                if msg.contains(&*path.to_string_lossy()) {
                    eprintln!("error: {msg}");
                } else {
                    eprintln!("error: {}: {msg}", path.display());
                }
                if status == EXIT_OK {
                    status = exit_code(&e);
                }
                continue;
            }
        };
        let body = match a.format {
            Format::Text => {
                let mut s = String::new();
                for d in &out.detections {
                    let _ = writeln!(s, "{}", d.to_line());
                }
                if a.timing {
                    s.push_str(&out.timing_report());
                }
                s
            }
            Format::Json => {
                let mut v = detections_json(path, &out.detections);
                if a.timing {
                    let t: serde_json::Map<String, serde_json::Value> = out
                        .timings
                        .stages()
                        .iter()
                        .map(|(n, d)| (n.to_string(), json!(d.as_secs_f64() * 1e3)))
                        .chain([("total".to_string(), json!(out.timings.total.as_secs_f64() * 1e3))])
                        .collect();
                    v["timing_ms"] = serde_json::Value::Object(t);
                }
                json_items.push(v.clone());
                format!("{v}\n")
            }
        };
        match &a.out {
            Some(dir) => {
                let ext = if a.format == Format::Json { "json" } else { "txt" };
                write_file(&dir.join(format!("{}.{ext}", file_stem(path))), &body)?;
                if a.overlay {
                    draw_overlay(&img, &out.detections).write_pgm(dir.join(format!("{}.overlay.pgm", file_stem(path))))?;
                }
            }
            None if a.format == Format::Text => {
                let _ = writeln!(stdout, "# {}", path.display());
                stdout.push_str(&body);
            }
            None => {}
        }
    }
    if a.out.is_none() {
        if a.format == Format::Json {
            println!("{}", serde_json::Value::Array(json_items));
        } else {
            print!("{stdout}");
        }
    }
    Ok(status)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let params = a.scan.params();
    params.validate()?;
    require_file(&a.manifest)?;
    let model = load_model(&a.model)?;
    let images = load_ground_truth(&a.manifest)?;
    let records = evaluate(&model, &images, &params)?;
    let windows = recall_at_rejection(&CascadeView::full(&model), &images, &params)?;
    let points = sweep(&records, MATCH_IOU)?;
    let faces: usize = images.iter().map(|i| i.truths.len()).sum();
    let detections: usize = records.iter().map(|r| r.detections.len()).sum();
    let shapes = landmark_errors(&records, MATCH_IOU);
    let roc = roc_points(&records, MATCH_IOU)?;
    let pr = pr_points(&records, MATCH_IOU)?;
    let last = points.last();
    let summary = vec![
        ("images".to_string(), images.len().to_string()),
        ("faces".to_string(), faces.to_string()),
        ("detections".to_string(), detections.to_string()),
        ("true positives".to_string(), last.map_or(0, |p| p.true_positives).to_string()),
        ("false positives".to_string(), last.map_or(0, |p| p.false_positives).to_string()),
        ("DR@100FPs".to_string(), format!("{:.6}", detection_rate_at(&roc, 100.0))),
        ("PR area".to_string(), format!("{:.6}", pr_area(&pr))),
        (
            "landmark error (mean, /face width)".to_string(),
            if shapes.errors.is_empty() {
                "n/a".into()
            } else {
                format!("{:.6} over {} faces", shapes.mean, shapes.errors.len())
            },
        ),
        ("grid windows (all levels)".to_string(), windows.grid_windows.to_string()),
        ("distinct windows (rounded boxes)".to_string(), windows.distinct_windows.to_string()),
        ("windows per image".to_string(), format!("{:.2}", windows.windows_per_image())),
        ("survivors before NMS per image".to_string(), format!("{:.2}", windows.survivors_per_image())),
        ("removal (grid denominator)".to_string(), format!("{:.6}", windows.removal())),
        ("removal (distinct denominator)".to_string(), format!("{:.6}", windows.distinct_removal())),
    ];
    let text = match a.curve {
        Curve::Roc => curve_text(("false_positives", "recall"), &roc, &summary),
        Curve::Pr => curve_text(("recall", "precision"), &pr, &summary),
    };
    match &a.out {
        Some(p) => {
            write_file(p, &text)?;
            for (k, v) in &summary {
                println!("{k}: {v}");
            }
        }
        None => print!("{text}"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    let mut params = reference_params();
    if let Some(s) = a.stride {
        params.stride = s;
    }
    if let Some(m) = a.min_face {
        params.min_face = m;
    }
    params.threads = a.threads;
    params.validate()?;
    if a.repetitions < crate::evaluation::MIN_REPETITIONS {
        return Err(Error::config(format!(
            "benchmark needs at least {} repetitions, got {}",
            crate::evaluation::MIN_REPETITIONS,
            a.repetitions
        )));
    }
    let model = load_model(&a.model)?;
    let images = if a.images.is_empty() {
        vec![reference_image(0)]
    } else {
        a.images.iter().map(GrayImage::open).collect::<Result<Vec<_>>>()?
    };
    let r = bench_detect(&model, &images, &params, a.repetitions)?;
    match a.format {
        Format::Text => {
            if a.images.is_empty() {
                println!("# reference preset: 640x480 synthetic scene, min face {}, stride {}", params.min_face, params.stride);
            }
            print!("{r}");
        }
        Format::Json => {
            let n = r.images as f64;
            let stages: serde_json::Map<String, serde_json::Value> = r
                .stage_medians
                .iter()
                .map(|(k, d)| (k.to_string(), json!(d.as_secs_f64() * 1e3 / n)))
                .collect();
            println!(
                "{}",
                json!({
                    "repetitions": r.repetitions,
                    "images": r.images,
                    "median_ms_per_image": stages,
                    "total_ms_per_image": r.total_median.as_secs_f64() * 1e3 / n,
                    "cv": r.total_cv,
                })
            );
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_inspect(a: &InspectArgs) -> Result<i32> {
    let model = load_model(&a.model)?;
    match a.format {
        Format::Text => print!("{}", model.summary()),
        Format::Json => {
            let dims = |s: &crate::cascade::MlpStage| s.model.layer_dims().to_vec();
            println!(
                "{}",
                json!({
                    "format": model.format,
                    "surf_pool_hash": model.surf_pool_hash,
                    "views": model.views.len(),
                    "view_to_branch": model.topology.view_to_branch,
                    "lab_weak_per_view": model.lab_cascades.iter().map(|c| c.weak().len()).collect::<Vec<_>>(),
                    "lab_thresholds": model.lab_cascades.iter().map(|c| c.threshold()).collect::<Vec<_>>(),
                    "coarse": model.coarse_branches.iter().map(|b| json!({
                        "name": b.name,
                        "layers": b.stages.iter().map(dims).collect::<Vec<_>>(),
                        "thresholds": b.stages.iter().map(|s| s.threshold).collect::<Vec<_>>(),
                    })).collect::<Vec<_>>(),
                    "fine_layers": model.fine_cascade.iter().map(dims).collect::<Vec<_>>(),
                    "fine_thresholds": model.fine_cascade.iter().map(|s| s.threshold).collect::<Vec<_>>(),
                    "mean_shape": model.mean_shape.as_slice(),
                    "lambda": model.metadata.lambda,
                })
            );
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let ds = match a.scenes {
        None => crate::synth::dataset(&crate::synth::SynthConfig {
            faces: a.faces,
            negatives: a.negatives,
            seed: a.seed,
            ..Default::default()
        }),
        Some(n) => {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut ds = Dataset::default();
            for _ in 0..n {
                let scene = crate::synth::scene(320, 240, 4, (40, 100), &mut rng);
                let image = Arc::new(scene.image);
                ds.positives.extend(scene.faces.iter().map(|f| PositiveRecord {
                    image: image.clone(),
                    rect: f.rect,
                    yaw: f.yaw,
                    shape: Some(f.shape),
                    source: String::new(),
                }));
            }
            ds
        }
    };
    let manifest = write_dataset(&a.out, &ds)?;
    println!("{}", manifest.display());
    Ok(EXIT_OK)
}
