//! Real AdaBoost over LAB look-up-table weak learners.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::lab::{all_locators, compute_lab_map, lab_code_at, LabFeatureLocator, LabFeatureMap};
use crate::imaging::{GrayImage, WindowRect, WINDOW_SIZE};

pub const LUT_SIZE: usize = 256;

/// Default weak learners per view.
pub const DEFAULT_WEAK_COUNT: usize = 150;

/// Weak learner: a LAB feature position and one output per code.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabWeakClassifier {
    pub locator: LabFeatureLocator,
    pub lut: Vec<f64>,
}

impl LabWeakClassifier {
    #[inline]
    pub fn eval(&self, map: &LabFeatureMap, window: &WindowRect) -> f64 {
        self.lut[lab_code_at(map, window, &self.locator) as usize]
    }

    fn max_output(&self) -> f64 {
        self.lut.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LabCascadeRecord {
    view_id: usize,
    threshold: f64,
    weak: Vec<LabWeakClassifier>,
}

/// One boosted stage for one view: accept iff the LUT sum reaches the
/// threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "LabCascadeRecord", into = "LabCascadeRecord")]
pub struct LabCascadeModel {
    view_id: usize,
    threshold: f64,
    weak: Vec<LabWeakClassifier>,
    // remaining_max[i] = Σ_{j >= i} max lut_j; one extra trailing zero.
    remaining_max: Vec<f64>,
}

impl From<LabCascadeRecord> for LabCascadeModel {
    fn from(r: LabCascadeRecord) -> Self {
        let mut remaining_max = vec![0.0; r.weak.len() + 1];
        for i in (0..r.weak.len()).rev() {
            remaining_max[i] = remaining_max[i + 1] + r.weak[i].max_output();
        }
        LabCascadeModel {
            view_id: r.view_id,
            threshold: r.threshold,
            weak: r.weak,
            remaining_max,
        }
    }
}

impl From<LabCascadeModel> for LabCascadeRecord {
    fn from(m: LabCascadeModel) -> Self {
        LabCascadeRecord {
            view_id: m.view_id,
            threshold: m.threshold,
            weak: m.weak,
        }
    }
}

/// Outcome of evaluating one window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabDecision {
    pub accept: bool,
    pub score: f64,
}

impl LabCascadeModel {
    pub fn new(view_id: usize, weak: Vec<LabWeakClassifier>, threshold: f64) -> Result<Self> {
        let m = LabCascadeModel::from(LabCascadeRecord {
            view_id,
            threshold,
            weak,
        });
        m.validate(None)?;
        Ok(m)
    }

    /// Checks the weak list, LUT sizes, finiteness and (when given) that
    /// every locator fits the canonical window for `block_sizes`.
    pub fn validate(&self, block_sizes: Option<&[(usize, usize)]>) -> Result<()> {
        if self.weak.is_empty() {
            return Err(Error::input(format!("LAB cascade for view {} has no weak classifiers", self.view_id)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::input("LAB threshold must be finite"));
        }
        for (i, w) in self.weak.iter().enumerate() {
            if w.lut.len() != LUT_SIZE {
                return Err(Error::input(format!("weak classifier {i} has {} LUT entries", w.lut.len())));
            }
            if w.lut.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("weak classifier {i} has non-finite outputs")));
            }
            if let Some(bs) = block_sizes {
                if !w.locator.fits(bs) {
                    return Err(Error::input(format!("weak classifier {i} locator {:?} leaves the window", w.locator)));
                }
            }
        }
        Ok(())
    }

    pub fn view_id(&self) -> usize {
        self.view_id
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn weak(&self) -> &[LabWeakClassifier] {
        &self.weak
    }

    /// Copy with a different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Self {
        LabCascadeModel {
            threshold,
            ..self.clone()
        }
    }

    /// Full sum over all weak learners.
    pub fn score(&self, map: &LabFeatureMap, window: &WindowRect) -> f64 {
        self.weak.iter().map(|w| w.eval(map, window)).sum()
    }

    /// Decision and full score.
    pub fn classify(&self, map: &LabFeatureMap, window: &WindowRect) -> LabDecision {
        let score = self.score(map, window);
        LabDecision {
            accept: score >= self.threshold,
            score,
        }
    }

    /// Decision only, stopping once the threshold is out of reach.
    /// Always agrees with [`classify`](Self::classify).
    #[inline]
    pub fn accepts(&self, map: &LabFeatureMap, window: &WindowRect) -> bool {
        let mut score = 0.0;
        for (i, w) in self.weak.iter().enumerate() {
            if score + self.remaining_max[i] < self.threshold {
                return false;
            }
            score += w.eval(map, window);
        }
        score >= self.threshold
    }

    /// Score from an arbitrary code source (one code per weak learner).
    pub fn score_with(&self, mut code_of: impl FnMut(&LabFeatureLocator) -> u8) -> f64 {
        self.weak.iter().map(|w| w.lut[code_of(&w.locator) as usize]).sum()
    }
}

/// Free-function form of [`LabCascadeModel::classify`].
pub fn classify_lab(c: &LabCascadeModel, map: &LabFeatureMap, w: &WindowRect) -> LabDecision {
    c.classify(map, w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabTrainConfig {
    pub n_weak: usize,
    /// Minimum fraction of calibration positives that must pass.
    pub target_recall: f64,
    pub block_sizes: Vec<(usize, usize)>,
}

impl Default for LabTrainConfig {
    fn default() -> Self {
        LabTrainConfig {
            n_weak: DEFAULT_WEAK_COUNT,
            target_recall: 0.995,
            block_sizes: crate::features::DEFAULT_BLOCK_SIZES.to_vec(),
        }
    }
}

/// Diagnostics of one boosting run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabTrainReport {
    /// Normaliser `Z` of each round.
    pub z: Vec<f64>,
    /// Unweighted training error at threshold 0 after each round.
    pub train_error: Vec<f64>,
    pub threshold: f64,
    pub calibration_recall: f64,
}

/// Codes of every locator for every sample, locator-major.
struct CodeTable {
    n: usize,
    codes: Vec<u8>,
}

impl CodeTable {
    fn build(samples: &[GrayImage], locators: &[LabFeatureLocator], block_sizes: &[(usize, usize)]) -> Result<Self> {
        let n = samples.len();
        let mut codes = vec![0u8; n * locators.len()];
        let origin = WindowRect::canonical(0, 0, 0);
        for (i, s) in samples.iter().enumerate() {
            if s.width() != WINDOW_SIZE || s.height() != WINDOW_SIZE {
                return Err(Error::input(format!(
                    "LAB training samples must be {WINDOW_SIZE}x{WINDOW_SIZE}, got {}x{}",
                    s.width(),
                    s.height()
                )));
            }
            let map = compute_lab_map(s, block_sizes)?;
            for (j, loc) in locators.iter().enumerate() {
                codes[j * n + i] = lab_code_at(&map, &origin, loc);
            }
        }
        Ok(CodeTable { n, codes })
    }

    #[inline]
    fn column(&self, j: usize) -> &[u8] {
        &self.codes[j * self.n..(j + 1) * self.n]
    }
}

/// Threshold keeping at least `target` of `scores`: the largest `t` with
/// `|{s >= t}| >= ceil(target * n)`.
pub fn calibrate_threshold(scores: &[f64], target: f64) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let keep = ((target * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let keep = keep.min(sorted.len());
    Some(sorted[sorted.len() - keep])
}

/// Trains one boosted LAB stage for `view_id`.
///
/// Each round picks the locator minimising `Z = 2 Σ_c sqrt(W+(c) W-(c))`
/// and sets `h(c) = ½ ln((W+(c) + ε) / (W-(c) + ε))` with `ε = 1 / (4N)`.
/// The threshold is then calibrated on `calibration` positives.
pub fn train_lab_stage(
    view_id: usize,
    positives: &[GrayImage],
    negatives: &[GrayImage],
    calibration: &[GrayImage],
    cfg: &LabTrainConfig,
) -> Result<(LabCascadeModel, LabTrainReport)> {
    let stage = format!("LAB view {view_id}");
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::training(&stage, "both positive and negative samples are required"));
    }
    if calibration.is_empty() {
        return Err(Error::training(&stage, "no calibration positives"));
    }
    if cfg.n_weak == 0 {
        return Err(Error::config("at least one weak classifier is required"));
    }
    if !(cfg.target_recall > 0.0 && cfg.target_recall <= 1.0) {
        return Err(Error::config("target recall must lie in (0, 1]"));
    }
    let locators = all_locators(&cfg.block_sizes);
    if locators.is_empty() {
        return Err(Error::config("no LAB locator fits the canonical window"));
    }
    let pos = CodeTable::build(positives, &locators, &cfg.block_sizes)?;
    let neg = CodeTable::build(negatives, &locators, &cfg.block_sizes)?;
    let (np, nn) = (positives.len(), negatives.len());
    let eps = 1.0 / (4.0 * (np + nn) as f64);

    let mut wp = vec![0.5 / np as f64; np];
    let mut wn = vec![0.5 / nn as f64; nn];
    let mut fp = vec![0.0; np];
    let mut fn_ = vec![0.0; nn];
    let mut weak = Vec::with_capacity(cfg.n_weak);
    let mut report = LabTrainReport::default();

    let mut hp = [0.0f64; LUT_SIZE];
    let mut hn = [0.0f64; LUT_SIZE];
    for _round in 0..cfg.n_weak {
        let mut best = (f64::INFINITY, 0usize);
        for j in 0..locators.len() {
            hp.fill(0.0);
            hn.fill(0.0);
            for (&c, &w) in pos.column(j).iter().zip(&wp) {
                hp[c as usize] += w;
            }
            for (&c, &w) in neg.column(j).iter().zip(&wn) {
                hn[c as usize] += w;
            }
            let z = 2.0 * hp.iter().zip(&hn).map(|(a, b)| (a * b).sqrt()).sum::<f64>();
            if z < best.0 {
                best = (z, j);
            }
        }
        let (z, j) = best;
        hp.fill(0.0);
        hn.fill(0.0);
        for (&c, &w) in pos.column(j).iter().zip(&wp) {
            hp[c as usize] += w;
        }
        for (&c, &w) in neg.column(j).iter().zip(&wn) {
            hn[c as usize] += w;
        }
        let lut: Vec<f64> = (0..LUT_SIZE).map(|c| 0.5 * ((hp[c] + eps) / (hn[c] + eps)).ln()).collect();

        // Reweight and normalise.
        let mut total = 0.0;
        for ((&c, w), f) in pos.column(j).iter().zip(wp.iter_mut()).zip(fp.iter_mut()) {
            let h = lut[c as usize];
            *f += h;
            *w *= (-h).exp();
            total += *w;
        }
        for ((&c, w), f) in neg.column(j).iter().zip(wn.iter_mut()).zip(fn_.iter_mut()) {
            let h = lut[c as usize];
            *f += h;
            *w *= h.exp();
            total += *w;
        }
        for w in wp.iter_mut().chain(wn.iter_mut()) {
            *w /= total;
        }

        let errors = fp.iter().filter(|&&f| f < 0.0).count() + fn_.iter().filter(|&&f| f >= 0.0).count();
        report.z.push(z);
        report.train_error.push(errors as f64 / (np + nn) as f64);
        weak.push(LabWeakClassifier {
            locator: locators[j],
            lut,
        });
    }

    let mut model = LabCascadeModel::new(view_id, weak, 0.0)?;
    let origin = WindowRect::canonical(0, 0, 0);
    let calib_scores = calibration
        .iter()
        .map(|s| Ok(model.score(&compute_lab_map(s, &cfg.block_sizes)?, &origin)))
        .collect::<Result<Vec<f64>>>()?;
    let threshold = calibrate_threshold(&calib_scores, cfg.target_recall).unwrap();
    model = model.with_threshold(threshold);
    report.threshold = threshold;
    report.calibration_recall =
        calib_scores.iter().filter(|&&s| s >= threshold).count() as f64 / calib_scores.len() as f64;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::lab::DEFAULT_BLOCK_SIZES;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(rng: &mut ChaCha8Rng) -> GrayImage {
        GrayImage::from_fn(40, 40, |_, _| rng.gen_range(60..200)).unwrap()
    }

    /// Positives carry a bright 4x4 block at (14, 14) over a dark ring.
    fn with_bright_centre(rng: &mut ChaCha8Rng) -> GrayImage {
        let mut img = noise(rng);
        for y in 10..22 {
            for x in 10..22 {
                let inside = (14..18).contains(&x) && (14..18).contains(&y);
                img.set(x, y, if inside { 250 } else { 5 });
            }
        }
        img
    }

    fn random_model(rng: &mut ChaCha8Rng, view_id: usize, n: usize) -> LabCascadeModel {
        let locs = all_locators(&DEFAULT_BLOCK_SIZES);
        let weak = (0..n)
            .map(|_| LabWeakClassifier {
                locator: locs[rng.gen_range(0..locs.len())],
                lut: (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        LabCascadeModel::new(view_id, weak, rng.gen_range(-2.0..2.0)).unwrap()
    }

    #[test]
    fn separable_code_gives_zero_error_after_first_round() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pos: Vec<_> = (0..60).map(|_| with_bright_centre(&mut rng)).collect();
        let neg: Vec<_> = (0..120).map(|_| noise(&mut rng)).collect();
        let calib: Vec<_> = (0..20).map(|_| with_bright_centre(&mut rng)).collect();
        let cfg = LabTrainConfig {
            n_weak: 5,
            ..Default::default()
        };
        let (model, report) = train_lab_stage(0, &pos, &neg, &calib, &cfg).unwrap();
        assert_eq!(report.train_error[0], 0.0);
        // Some locator separates the classes perfectly, so its Z vanishes.
        assert!(report.z[0] < 1e-12);
        assert!(model.weak().len() == 5);
        for w in report.train_error.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(report.z.iter().all(|&z| z <= 1.0 + 1e-12));
        assert!(report.calibration_recall >= cfg.target_recall);
    }

    #[test]
    fn training_error_non_increasing_on_noisy_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // Faint pattern: boosting has to combine several features.
        let faint = |rng: &mut ChaCha8Rng| {
            let mut img = noise(rng);
            for y in 8..32 {
                for x in 8..32 {
                    let v = img.get(x, y) as i32 + if (y / 4) % 2 == 0 { 25 } else { -25 };
                    img.set(x, y, v.clamp(0, 255) as u8);
                }
            }
            img
        };
        let pos: Vec<_> = (0..80).map(|_| faint(&mut rng)).collect();
        let neg: Vec<_> = (0..160).map(|_| noise(&mut rng)).collect();
        let cfg = LabTrainConfig {
            n_weak: 12,
            ..Default::default()
        };
        let (_, report) = train_lab_stage(1, &pos, &neg, &pos[..10], &cfg).unwrap();
        for w in report.train_error.windows(2) {
            assert!(w[1] <= w[0], "{:?}", report.train_error);
        }
    }

    #[test]
    fn degenerate_sets_are_training_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = vec![noise(&mut rng)];
        let cfg = LabTrainConfig::default();
        assert!(matches!(train_lab_stage(0, &[], &s, &s, &cfg), Err(Error::Training { .. })));
        assert!(matches!(train_lab_stage(0, &s, &[], &s, &cfg), Err(Error::Training { .. })));
        assert!(matches!(train_lab_stage(0, &s, &s, &[], &cfg), Err(Error::Training { .. })));
    }

    #[test]
    fn calibration_keeps_target_fraction() {
        let scores: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let t = calibrate_threshold(&scores, 0.995).unwrap();
        assert_eq!(t, 1.0);
        assert!(scores.iter().filter(|&&s| s >= t).count() as f64 / 200.0 >= 0.995);
        assert_eq!(calibrate_threshold(&[3.0], 0.5), Some(3.0));
        assert_eq!(calibrate_threshold(&scores, 1.0), Some(0.0));
        assert!(calibrate_threshold(&[], 0.9).is_none());
    }

    #[test]
    fn early_exit_matches_full_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img = GrayImage::from_fn(100, 90, |_, _| rng.gen()).unwrap();
        let map = compute_lab_map(&img, &DEFAULT_BLOCK_SIZES).unwrap();
        for v in 0..30 {
            let m = random_model(&mut rng, v, 20);
            for _ in 0..200 {
                let w = WindowRect::canonical(rng.gen_range(0..=60), rng.gen_range(0..=50), 0);
                assert_eq!(m.accepts(&map, &w), m.classify(&map, &w).accept);
            }
        }
    }

    #[test]
    fn raising_threshold_never_accepts_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = GrayImage::from_fn(80, 80, |_, _| rng.gen()).unwrap();
        let map = compute_lab_map(&img, &DEFAULT_BLOCK_SIZES).unwrap();
        let m = random_model(&mut rng, 0, 15);
        let stricter = m.with_threshold(m.threshold() + 0.5);
        for y in 0..=40 {
            for x in 0..=40 {
                let w = WindowRect::canonical(x, y, 0);
                assert!(!stricter.accepts(&map, &w) || m.accepts(&map, &w));
            }
        }
    }

    #[test]
    fn empty_model_is_rejected() {
        assert!(LabCascadeModel::new(0, vec![], 0.0).is_err());
        let bad = LabWeakClassifier {
            locator: LabFeatureLocator { dx: 0, dy: 0, block_size_index: 0 },
            lut: vec![0.0; 10],
        };
        assert!(LabCascadeModel::new(0, vec![bad], 0.0).is_err());
    }
}
