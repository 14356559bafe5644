//! Repeated timed detection runs.

use std::fmt;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::funnel::detect::{detect, DetectParams};
use crate::funnel::model::FunnelModel;
use crate::funnel::scan::{StageCounters, StageTimings};
use crate::imaging::GrayImage;

/// Minimum repetitions for stable medians.
pub const MIN_REPETITIONS: usize = 3;

/// Detection settings of the reference speed measurement: 640x480 input,
/// smallest face 80 pixels, stride 1, one thread.
pub fn reference_params() -> DetectParams {
    DetectParams {
        stride: 1,
        min_face: 80,
        threads: 1,
        ..DetectParams::default()
    }
}

/// A 640x480 synthetic scene with a few faces, for the reference preset.
pub fn reference_image(seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    crate::synth::scene(640, 480, 3, (80, 160), &mut rng).image
}

/// Median stage times over repetitions; each repetition runs every image.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub repetitions: usize,
    pub images: usize,
    /// Median per-repetition time of each stage, pipeline order.
    pub stage_medians: Vec<(&'static str, Duration)>,
    pub total_median: Duration,
    /// Standard deviation over mean of the per-repetition totals.
    pub total_cv: f64,
    /// Windows alive after each stage, summed over images (one repetition).
    pub counters: StageCounters,
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Times `detect` on every image `repetitions` times.
pub fn bench_detect(model: &FunnelModel, images: &[GrayImage], params: &DetectParams, repetitions: usize) -> Result<BenchReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::config(format!(
            "benchmark needs at least {MIN_REPETITIONS} repetitions, got {repetitions}"
        )));
    }
    if images.is_empty() {
        return Err(Error::input("no images to benchmark"));
    }
    let mut per_rep: Vec<StageTimings> = Vec::with_capacity(repetitions);
    let mut counters = StageCounters::default();
    for rep in 0..repetitions {
        let mut t = StageTimings::default();
        let mut c = StageCounters::default();
        for img in images {
            let out = detect(model, img, params)?;
            t.add(&out.timings);
            c.add(&out.counters);
        }
        if rep == 0 {
            counters = c;
        }
        per_rep.push(t);
    }
    let names = per_rep[0].stages().map(|(n, _)| n);
    let stage_medians = names
        .iter()
        .enumerate()
        .map(|(k, &n)| (n, median(per_rep.iter().map(|t| t.stages()[k].1).collect())))
        .collect();
    let totals: Vec<f64> = per_rep.iter().map(|t| t.total.as_secs_f64()).collect();
    let mean = totals.iter().sum::<f64>() / totals.len() as f64;
    let var = totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / totals.len() as f64;
    Ok(BenchReport {
        repetitions,
        images: images.len(),
        stage_medians,
        total_median: median(per_rep.iter().map(|t| t.total).collect()),
        total_cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        counters,
    })
}

impl BenchReport {
    /// Median total per image.
    pub fn per_image(&self) -> Duration {
        self.total_median / self.images as u32
    }

    /// Stage 1 and stage 2 time together, and stage 3 time, per image.
    pub fn coarse_vs_fine(&self) -> (Duration, Duration) {
        let get = |n: &str| self.stage_medians.iter().find(|(k, _)| *k == n).map_or(Duration::ZERO, |s| s.1);
        let n = self.images as u32;
        ((get("lab_map") + get("stage1") + get("stage2")) / n, get("stage3") / n)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.images as f64;
        writeln!(f, "# benchmark: {} repetitions over {} images (median ms per image)", self.repetitions, self.images)?;
        for (name, d) in &self.stage_medians {
            writeln!(f, "{name:<8} {:>10.3}", d.as_secs_f64() * 1e3 / n)?;
        }
        writeln!(f, "{:<8} {:>10.3}", "total", self.total_median.as_secs_f64() * 1e3 / n)?;
        writeln!(f, "cv       {:>10.4}", self.total_cv)?;
        let c = &self.counters;
        writeln!(
            f,
            "windows {} stage1 {} stage2 {} stage3a {} stage3 {} nms {}",
            c.windows, c.after_stage1, c.after_stage2, c.after_stage3a, c.after_stage3, c.after_nms
        )
    }
}
