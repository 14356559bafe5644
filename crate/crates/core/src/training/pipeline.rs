//! Stage-wise training of a complete funnel.

use std::fmt;
use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cascade::{calibrate_threshold, train_lab_stage, FeatureSpec, LabCascadeModel, LabTrainConfig, MlpStage};
use crate::error::{Error, Result};
use crate::evaluation::run::refine_shape;
use crate::evaluation::rejection::{recall_at_rejection, sample_recall, sample_survivor, AnnotatedImage};
use crate::features::shape::{shape_indexed_features, Shape4, SHAPE_DIM};
use crate::features::surf::{default_pool_hash, default_surf_pool, surf_group_features, SURF_DIM, SURF_POOL_SIZE};
use crate::funnel::model::{branch_name, CoarseBranch, FunnelModel, FunnelTopology, TrainingMetadata, FORMAT_VERSION};
use crate::funnel::scan::CascadeView;
use crate::imaging::{GrayImage, IntegralImage, WindowRect};
use crate::neural::{select_feature_groups, train_joint_mlp, train_mlp, Activations, GroupSparseConfig, TrainConfig};
use crate::training::augment::{augment, distorted_sample, AugmentBounds, Distortion, TrainSample};
use crate::training::dataset::{Dataset, PositiveRecord};
use crate::training::mining::{mine_hard_negatives, MiningParams};
use crate::training::views::{partition_views, ViewScheme};

/// Shape used by the fine cascade when no face carries landmarks.
pub const DEFAULT_MEAN_SHAPE: [(f64, f64); 4] = [(0.3, 0.4), (0.7, 0.4), (0.5, 0.6), (0.5, 0.78)];

/// Coordinate-wise mean of normalised shapes.
pub fn mean_shape(shapes: &[Shape4]) -> Result<Shape4> {
    if shapes.is_empty() {
        return Err(Error::training("mean shape", "no annotated faces"));
    }
    let mut acc = [0.0; SHAPE_DIM];
    for s in shapes {
        for (a, v) in acc.iter_mut().zip(s.as_slice()) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= shapes.len() as f64;
    }
    Shape4::from_slice(&acc)
}

/// A seed for one named task, derived from the run seed.
pub fn derive_seed(seed: u64, task: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task.bytes().chain(index.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Everything that controls a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct FunnelTrainConfig {
    pub seed: u64,
    pub scheme: ViewScheme,
    /// Branch of each view; `None` uses the scheme's default routing.
    pub branches: Option<Vec<usize>>,
    /// Windows per face, including the undistorted one.
    pub augment_factor: usize,
    pub augment_bounds: AugmentBounds,
    pub lab: LabTrainConfig,
    /// Random background crops for each LAB cascade.
    pub lab_negatives: usize,
    /// Rounds of retraining each LAB cascade on its own false positives.
    pub lab_bootstrap_rounds: usize,
    /// SURF groups selected by each coarse stage.
    pub coarse_groups: Vec<usize>,
    /// Hidden units of each coarse stage.
    pub coarse_hidden: Vec<usize>,
    pub fine_hidden: usize,
    pub fine_stages: usize,
    /// Mined negatives per positive for MLP stages.
    pub negative_ratio: usize,
    /// Fraction of validation faces each stage must keep.
    pub stage_recall: f64,
    /// Training fails if the validation recall of the cascade so far drops
    /// below this.
    pub min_cumulative_recall: f64,
    /// Fraction of faces per view (and of negative images) held out. Held-out
    /// faces are used undistorted and mirrored.
    pub validation_fraction: f64,
    pub coarse_mlp: TrainConfig,
    pub fine_mlp: TrainConfig,
    pub group_select: GroupSparseConfig,
    pub mining: MiningParams,
    /// Worker threads for per-view LAB training.
    pub threads: usize,
}

impl Default for FunnelTrainConfig {
    fn default() -> Self {
        FunnelTrainConfig {
            seed: 0,
            scheme: ViewScheme::Five,
            branches: None,
            augment_factor: 4,
            augment_bounds: AugmentBounds::default(),
            lab: LabTrainConfig::default(),
            lab_negatives: 8000,
            lab_bootstrap_rounds: 1,
            coarse_groups: vec![2, 4, 6],
            coarse_hidden: vec![15, 20, 20],
            fine_hidden: 80,
            fine_stages: 2,
            negative_ratio: 3,
            stage_recall: 0.995,
            min_cumulative_recall: 0.9,
            validation_fraction: 0.1,
            coarse_mlp: TrainConfig {
                epochs: 40,
                ..TrainConfig::default()
            },
            fine_mlp: TrainConfig {
                epochs: 30,
                learning_rate: 2.0,
                ..TrainConfig::default()
            },
            group_select: GroupSparseConfig {
                iterations: 100,
                max_samples: 2000,
                ..GroupSparseConfig::default()
            },
            mining: MiningParams::default(),
            threads: 1,
        }
    }
}

impl FunnelTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        let v = self.scheme.view_count();
        if let Some(b) = &self.branches {
            if b.len() != v {
                return Err(Error::config(format!("{} branch ids given for {v} views", b.len())));
            }
            let n = b.iter().max().map_or(0, |m| m + 1);
            if (0..n).any(|k| !b.contains(&k)) {
                return Err(Error::config("branch ids must cover 0..n without gaps"));
            }
        }
        if self.augment_factor == 0 {
            return Err(Error::config("augmentation factor must be at least 1"));
        }
        if self.coarse_groups.len() != self.coarse_hidden.len() {
            return Err(Error::config("coarse group and hidden-unit lists differ in length"));
        }
        if self.coarse_groups.iter().any(|&k| k == 0 || k > SURF_POOL_SIZE) {
            return Err(Error::config(format!("coarse stages select 1..={SURF_POOL_SIZE} groups")));
        }
        if self.coarse_hidden.contains(&0) || self.fine_hidden == 0 {
            return Err(Error::config("hidden layers need at least one unit"));
        }
        if self.fine_stages == 0 {
            return Err(Error::config("at least one fine stage is required"));
        }
        if self.negative_ratio == 0 || self.lab_negatives == 0 {
            return Err(Error::config("negative counts must be positive"));
        }
        for (name, x) in [("stage recall", self.stage_recall), ("minimum cumulative recall", self.min_cumulative_recall)] {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1], got {x}")));
            }
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::config("validation fraction must lie in [0, 1)"));
        }
        if self.threads == 0 {
            return Err(Error::config("thread count must be at least 1"));
        }
        self.coarse_mlp.validate()?;
        self.fine_mlp.validate()?;
        self.mining.detect_params().validate()
    }

    fn view_to_branch(&self) -> Vec<usize> {
        self.branches.clone().unwrap_or_else(|| self.scheme.default_branches())
    }
}

/// Outcome of one trained stage, measured on held-out data.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: String,
    /// `None` for the union row of stage 1.
    pub threshold: Option<f64>,
    pub train_positives: usize,
    pub train_negatives: usize,
    /// Hard negatives ran out and random crops filled the gap.
    pub negatives_short: bool,
    /// Held-out faces in scope that survive the cascade up to this stage.
    pub recall: f64,
    /// Fraction of windows removed on held-out negative images.
    pub removal: f64,
    pub survivors_per_image: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub train_faces_per_view: Vec<usize>,
    pub validation_faces: usize,
    pub validation_negative_images: usize,
    pub mean_shape_only: bool,
    pub stages: Vec<StageReport>,
    pub warnings: Vec<String>,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# training report")?;
        let per_view: Vec<String> = self.train_faces_per_view.iter().map(|n| n.to_string()).collect();
        writeln!(f, "train faces per view: {}", per_view.join(" "))?;
        writeln!(f, "validation faces: {}", self.validation_faces)?;
        writeln!(f, "validation negative images: {}", self.validation_negative_images)?;
        writeln!(f, "mean shape only: {}", self.mean_shape_only)?;
        writeln!(
            f,
            "{:<16} {:>12} {:>8} {:>8} {:>6} {:>8} {:>9} {:>12}",
            "stage", "threshold", "pos", "neg", "short", "recall", "removal", "surv/image"
        )?;
        for s in &self.stages {
            writeln!(
                f,
                "{:<16} {:>12} {:>8} {:>8} {:>6} {:>8.4} {:>9.6} {:>12.2}",
                s.stage,
                s.threshold.map_or("-".to_string(), |t| format!("{t:.6}")),
                s.train_positives,
                s.train_negatives,
                if s.negatives_short { "yes" } else { "no" },
                s.recall,
                s.removal,
                s.survivors_per_image
            )?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Faces and background images after the validation split.
struct Split {
    train: Vec<TrainSample>,
    val: Vec<TrainSample>,
    train_negatives: Vec<Arc<GrayImage>>,
    val_negatives: Vec<AnnotatedImage>,
}

fn held_out(n: usize, fraction: f64) -> usize {
    if n < 2 || fraction <= 0.0 {
        0
    } else {
        ((n as f64 * fraction).ceil() as usize).clamp(1, n - 1)
    }
}

fn split(ds: &Dataset, cfg: &FunnelTrainConfig, warnings: &mut Vec<String>) -> Result<Split> {
    let yaws: Vec<f64> = ds.positives.iter().map(|p| p.yaw).collect();
    let parts = partition_views(&yaws, &cfg.scheme)?;
    let mut train_recs: Vec<PositiveRecord> = Vec::new();
    let mut val_recs: Vec<PositiveRecord> = Vec::new();
    for (v, idx) in parts.iter().enumerate() {
        let mut idx = idx.clone();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "split", v as u64)));
        let k = held_out(idx.len(), cfg.validation_fraction);
        val_recs.extend(idx[..k].iter().map(|&i| ds.positives[i].clone()));
        train_recs.extend(idx[k..].iter().map(|&i| ds.positives[i].clone()));
    }
    let train = augment(
        &train_recs,
        &cfg.scheme,
        cfg.augment_factor,
        &cfg.augment_bounds,
        derive_seed(cfg.seed, "augment", 0),
    )?;
    let mut val = Vec::with_capacity(2 * val_recs.len());
    let mirror = Distortion {
        mirror: true,
        ..Distortion::IDENTITY
    };
    for rec in &val_recs {
        val.push(distorted_sample(rec, &Distortion::IDENTITY, &cfg.scheme)?);
        if cfg.augment_bounds.mirror {
            val.push(distorted_sample(rec, &mirror, &cfg.scheme)?);
        }
    }

    let mut neg: Vec<usize> = (0..ds.negatives.len()).collect();
    neg.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "split-negatives", 0)));
    let k = held_out(neg.len(), cfg.validation_fraction);
    let (val_idx, train_idx) = if k == 0 {
        warnings.push("too few negative images to hold any out; rejection is measured on training images".into());
        (&neg[..], &neg[..])
    } else {
        (&neg[..k], &neg[k..])
    };
    Ok(Split {
        train,
        val,
        train_negatives: train_idx.iter().map(|&i| ds.negatives[i].1.clone()).collect(),
        val_negatives: val_idx
            .iter()
            .map(|&i| AnnotatedImage::negative(ds.negatives[i].0.clone(), ds.negatives[i].1.clone()))
            .collect(),
    })
}

/// Prefix with the given LAB cascades, the first `coarse[b]` stages of
/// each branch and the first `fine` fine stages.
fn prefix_view<'a>(
    cfg: &'a FunnelTrainConfig,
    view_to_branch: &'a [usize],
    lab: &'a [LabCascadeModel],
    branches: &'a [Vec<MlpStage>],
    coarse: &[usize],
    fine: &'a [MlpStage],
    mean_shape: Shape4,
) -> CascadeView<'a> {
    CascadeView {
        lab,
        block_sizes: &cfg.lab.block_sizes,
        view_to_branch,
        branches: branches.iter().zip(coarse).map(|(s, &k)| &s[..k]).collect(),
        fine,
        mean_shape,
        pool: default_surf_pool(),
    }
}

/// Hard negatives for a stage, topped up with random crops when the
/// prefix lets too few windows through.
fn mine(
    view: &CascadeView,
    images: &[Arc<GrayImage>],
    n: usize,
    params: &MiningParams,
    stage: &str,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<(Vec<GrayImage>, bool)> {
    let mined = mine_hard_negatives(view, images, n, params, seed)?;
    let mut samples = mined.samples;
    if mined.short {
        let mut all = view.clone();
        all.lab = &[];
        for b in all.branches.iter_mut() {
            *b = &[];
        }
        all.fine = &[];
        let fill = mine_hard_negatives(&all, images, n - samples.len(), params, seed ^ 1)?;
        warnings.push(format!(
            "{stage}: only {} hard negatives available, {} random crops added",
            mined.available,
            fill.samples.len()
        ));
        samples.extend(fill.samples);
    }
    Ok((samples, mined.short))
}

fn removal(view: &CascadeView, negatives: &[AnnotatedImage], params: &MiningParams) -> Result<(f64, f64)> {
    let r = recall_at_rejection(view, negatives, &params.detect_params())?;
    Ok((r.removal(), r.survivors_per_image()))
}

fn rasters(samples: &[&TrainSample]) -> Vec<GrayImage> {
    samples.iter().map(|s| s.raster.clone()).collect()
}

/// Descriptors of every SURF pool patch for a 40x40 raster.
fn surf_all(raster: &GrayImage) -> Vec<f64> {
    let ii = IntegralImage::new(raster);
    let pool = default_surf_pool();
    let groups: Vec<usize> = (0..pool.len()).collect();
    let mut out = Vec::new();
    surf_group_features(&ii, &WindowRect::canonical(0, 0, 0), &pool, &groups, &mut out);
    out
}

fn select(all: &[f64], groups: &[usize]) -> Vec<f64> {
    groups.iter().flat_map(|&g| all[g * SURF_DIM..(g + 1) * SURF_DIM].iter().copied()).collect()
}

fn check_recall(stage: &str, recall: f64, cfg: &FunnelTrainConfig) -> Result<()> {
    if recall < cfg.min_cumulative_recall {
        return Err(Error::training(
            stage,
            format!(
                "validation recall {recall:.4} below the required {:.4} after calibration",
                cfg.min_cumulative_recall
            ),
        ));
    }
    Ok(())
}

/// Trains every stage of a funnel from `ds`.
pub fn train_funnel(ds: &Dataset, cfg: &FunnelTrainConfig) -> Result<(FunnelModel, TrainReport)> {
    cfg.validate()?;
    if ds.positives.is_empty() {
        return Err(Error::training("data", "no face records"));
    }
    if ds.negatives.is_empty() {
        return Err(Error::training("data", "no negative images"));
    }
    let n_views = cfg.scheme.view_count();
    let v2b = cfg.view_to_branch();
    let n_branches = v2b.iter().max().map_or(0, |m| m + 1);

    let mut warnings = Vec::new();
    let data = split(ds, cfg, &mut warnings)?;
    let mut report = TrainReport {
        train_faces_per_view: (0..n_views)
            .map(|v| data.train.iter().filter(|s| s.view == Some(v)).count())
            .collect(),
        validation_faces: data.val.len(),
        validation_negative_images: data.val_negatives.len(),
        ..Default::default()
    };
    let in_views = |s: &TrainSample, views: &[usize]| s.view.is_some_and(|v| views.contains(&v));
    let default_shape = Shape4::from_points(DEFAULT_MEAN_SHAPE);
    let no_coarse = vec![0; n_branches];
    let empty_branches: Vec<Vec<MlpStage>> = vec![Vec::new(); n_branches];

    // Stage 1: one LAB cascade per view.
    let accept_all = prefix_view(cfg, &v2b, &[], &empty_branches, &no_coarse, &[], default_shape);
    let (lab_negs, lab_short) = mine(
        &accept_all,
        &data.train_negatives,
        cfg.lab_negatives,
        &cfg.mining,
        "lab",
        derive_seed(cfg.seed, "lab-negatives", 0),
        &mut warnings,
    )?;
    let mut view_inputs = Vec::with_capacity(n_views);
    for v in 0..n_views {
        let pos: Vec<&TrainSample> = data.train.iter().filter(|s| in_views(s, &[v])).collect();
        let mut cal: Vec<&TrainSample> = data.val.iter().filter(|s| in_views(s, &[v])).collect();
        if pos.is_empty() {
            return Err(Error::training(format!("lab/{v}"), "no training faces in this view"));
        }
        if cal.is_empty() {
            warnings.push(format!("lab/{v}: no held-out faces; threshold calibrated on training faces"));
            cal = pos.clone();
        }
        view_inputs.push((rasters(&pos), rasters(&cal)));
    }
    let train_view = |v: usize| -> Result<(LabCascadeModel, usize, Vec<String>)> {
        let (pos, cal) = &view_inputs[v];
        let mut negs = lab_negs.clone();
        let mut notes = Vec::new();
        let (mut model, _) = train_lab_stage(v, pos, &negs, cal, &cfg.lab)?;
        for round in 0..cfg.lab_bootstrap_rounds {
            let only = [model.clone()];
            let prefix = prefix_view(cfg, &v2b, &only, &empty_branches, &no_coarse, &[], default_shape);
            let seed = derive_seed(cfg.seed, "lab-bootstrap", (v * 1000 + round) as u64);
            let hard = mine_hard_negatives(&prefix, &data.train_negatives, cfg.lab_negatives / 2, &cfg.mining, seed)?;
            if hard.samples.is_empty() {
                break;
            }
            if hard.short {
                notes.push(format!("lab/{v}: bootstrap round {} found {} hard negatives", round + 1, hard.available));
            }
            negs.extend(hard.samples);
            model = train_lab_stage(v, pos, &negs, cal, &cfg.lab)?.0;
        }
        Ok((model, negs.len(), notes))
    };
    let trained: Vec<Result<(LabCascadeModel, usize, Vec<String>)>> = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| (0..n_views).into_par_iter().map(train_view).collect())
    } else {
        (0..n_views).map(train_view).collect()
    };
    let mut lab = Vec::with_capacity(n_views);
    for (v, r) in trained.into_iter().enumerate() {
        let (model, n_neg, notes) = r?;
        warnings.extend(notes);
        let only = [model.clone()];
        let prefix = prefix_view(cfg, &v2b, &only, &empty_branches, &no_coarse, &[], default_shape);
        let recall = sample_recall(&prefix, &view_inputs[v].1)?;
        let (rm, surv) = removal(&prefix, &data.val_negatives, &cfg.mining)?;
        report.stages.push(StageReport {
            stage: format!("lab/{v}"),
            threshold: Some(model.threshold()),
            train_positives: view_inputs[v].0.len(),
            train_negatives: n_neg,
            negatives_short: lab_short,
            recall,
            removal: rm,
            survivors_per_image: surv,
        });
        info!("lab/{v} trained: recall {recall:.4}, removal {rm:.6}");
        lab.push(model);
    }
    {
        let prefix = prefix_view(cfg, &v2b, &lab, &empty_branches, &no_coarse, &[], default_shape);
        let val_rasters: Vec<&GrayImage> = data.val.iter().map(|s| &s.raster).collect();
        let recall = sample_recall(&prefix, &val_rasters)?;
        let (rm, surv) = removal(&prefix, &data.val_negatives, &cfg.mining)?;
        report.stages.push(StageReport {
            stage: "lab/union".into(),
            threshold: None,
            train_positives: data.train.len(),
            train_negatives: lab_negs.len(),
            negatives_short: lab_short,
            recall,
            removal: rm,
            survivors_per_image: surv,
        });
        if !val_rasters.is_empty() {
            check_recall("lab/union", recall, cfg)?;
        }
    }

    // Stage 2: coarse SURF-MLP cascades per branch.
    let train_surf: Vec<Vec<f64>> = data.train.iter().map(|s| surf_all(&s.raster)).collect();
    let val_surf: Vec<Vec<f64>> = data.val.iter().map(|s| surf_all(&s.raster)).collect();
    let mut branches: Vec<Vec<MlpStage>> = vec![Vec::new(); n_branches];
    for br in 0..n_branches {
        let views: Vec<usize> = (0..n_views).filter(|&v| v2b[v] == br).collect();
        let branch_lab: Vec<LabCascadeModel> = views.iter().map(|&v| lab[v].clone()).collect();
        let pos_idx: Vec<usize> = (0..data.train.len()).filter(|&i| in_views(&data.train[i], &views)).collect();
        let mut val_idx: Vec<usize> = (0..data.val.len()).filter(|&i| in_views(&data.val[i], &views)).collect();
        let mut val_src = (&data.val, &val_surf);
        if val_idx.is_empty() {
            warnings.push(format!(
                "coarse/{}: no held-out faces; thresholds calibrated on training faces",
                branch_name(br)
            ));
            val_idx = pos_idx.clone();
            val_src = (&data.train, &train_surf);
        }
        let val_rasters: Vec<&GrayImage> = val_idx.iter().map(|&i| &val_src.0[i].raster).collect();
        for (k, (&n_groups, &hidden)) in cfg.coarse_groups.iter().zip(&cfg.coarse_hidden).enumerate() {
            let stage_name = format!("coarse/{}{}", branch_name(br), k + 1);
            let mut coarse = no_coarse.clone();
            coarse[br] = k;
            let prefix = prefix_view(cfg, &v2b, &branch_lab, &branches, &coarse, &[], default_shape);
            let (negs, short) = mine(
                &prefix,
                &data.train_negatives,
                cfg.negative_ratio * pos_idx.len(),
                &cfg.mining,
                &stage_name,
                derive_seed(cfg.seed, &stage_name, 0),
                &mut warnings,
            )?;
            if negs.is_empty() {
                return Err(Error::training(&stage_name, "no negative windows available"));
            }
            let mut feats: Vec<Vec<f64>> = pos_idx.iter().map(|&i| train_surf[i].clone()).collect();
            let mut labels = vec![1.0; feats.len()];
            feats.extend(negs.iter().map(surf_all));
            labels.resize(feats.len(), 0.0);
            let gs = GroupSparseConfig {
                seed: derive_seed(cfg.seed, &stage_name, 1),
                ..cfg.group_select.clone()
            };
            let groups = select_feature_groups(&feats, &labels, SURF_DIM, n_groups, &gs)
                .map_err(|e| Error::training(&stage_name, e.to_string()))?;
            let x: Vec<Vec<f64>> = feats.iter().map(|f| select(f, &groups)).collect();
            let mlp_cfg = TrainConfig {
                seed: derive_seed(cfg.seed, &stage_name, 2),
                ..cfg.coarse_mlp.clone()
            };
            let (model, _) =
                train_mlp(&x, &labels, &[hidden], &mlp_cfg).map_err(|e| Error::training(&stage_name, e.to_string()))?;

            let mut scores = Vec::new();
            let mut acts = Activations::default();
            for &i in &val_idx {
                if sample_survivor(&prefix, &val_src.0[i].raster)?.is_some() {
                    scores.push(model.class_score(&select(&val_src.1[i], &groups), &mut acts));
                }
            }
            let threshold = calibrate_threshold(&scores, cfg.stage_recall)
                .ok_or_else(|| Error::training(&stage_name, "no held-out face survives the previous stages"))?;
            branches[br].push(MlpStage {
                features: FeatureSpec::Surf { groups },
                threshold,
                model,
            });
            coarse[br] = k + 1;
            let prefix = prefix_view(cfg, &v2b, &branch_lab, &branches, &coarse, &[], default_shape);
            let recall = sample_recall(&prefix, &val_rasters)?;
            let (rm, surv) = removal(&prefix, &data.val_negatives, &cfg.mining)?;
            report.stages.push(StageReport {
                stage: stage_name.clone(),
                threshold: Some(threshold),
                train_positives: pos_idx.len(),
                train_negatives: negs.len(),
                negatives_short: short,
                recall,
                removal: rm,
                survivors_per_image: surv,
            });
            info!("{stage_name} trained: recall {recall:.4}, removal {rm:.6}");
            check_recall(&stage_name, recall, cfg)?;
        }
    }

    // Stage 3: unified fine cascade on shape-indexed features.
    let annotated: Vec<Shape4> = data.train.iter().filter_map(|s| s.shape).collect();
    let mean_shape_only = annotated.is_empty();
    if !mean_shape_only && annotated.len() < data.train.len() {
        warnings.push(format!(
            "fine: {} of {} training faces lack landmarks and are left out",
            data.train.len() - annotated.len(),
            data.train.len()
        ));
    }
    let mean = if mean_shape_only {
        default_shape
    } else {
        mean_shape(&annotated)?
    };
    report.mean_shape_only = mean_shape_only;
    let fine_pos: Vec<&TrainSample> = data
        .train
        .iter()
        .filter(|s| mean_shape_only || s.shape.is_some())
        .collect();
    let fine_val: Vec<&TrainSample> = if data.val.is_empty() {
        warnings.push("fine: no held-out faces; thresholds calibrated on training faces".into());
        data.train.iter().collect()
    } else {
        data.val.iter().collect()
    };
    let fine_val_rasters: Vec<&GrayImage> = fine_val.iter().map(|s| &s.raster).collect();
    let n_fine = if mean_shape_only { 1 } else { cfg.fine_stages };
    let full: Vec<usize> = branches.iter().map(|s| s.len()).collect();
    let mut fine: Vec<MlpStage> = Vec::new();
    let mut pos_shapes = vec![mean; fine_pos.len()];
    for j in 0..n_fine {
        let stage_name = format!("fine/{}", j + 1);
        let prefix = prefix_view(cfg, &v2b, &lab, &branches, &full, &fine, mean);
        let (negs, short) = mine(
            &prefix,
            &data.train_negatives,
            cfg.negative_ratio * fine_pos.len(),
            &cfg.mining,
            &stage_name,
            derive_seed(cfg.seed, &stage_name, 0),
            &mut warnings,
        )?;
        if negs.is_empty() {
            return Err(Error::training(&stage_name, "no negative windows available"));
        }
        let mut x: Vec<Vec<f64>> = fine_pos
            .iter()
            .zip(&pos_shapes)
            .map(|(s, sh)| shape_indexed_features(&s.raster, sh))
            .collect();
        let mut labels = vec![1.0; x.len()];
        let mut targets: Vec<Option<Shape4>> = fine_pos.iter().map(|s| s.shape).collect();
        for n in &negs {
            let sh = refine_shape(&fine, n, mean);
            x.push(shape_indexed_features(n, &sh));
            labels.push(0.0);
            targets.push(None);
        }
        let mlp_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &stage_name, 1),
            ..cfg.fine_mlp.clone()
        };
        let (model, _) = if mean_shape_only {
            train_mlp(&x, &labels, &[cfg.fine_hidden], &mlp_cfg)
        } else {
            train_joint_mlp(&x, &labels, &targets, &[cfg.fine_hidden], &mlp_cfg)
        }
        .map_err(|e| Error::training(&stage_name, e.to_string()))?;

        let mut scores = Vec::new();
        let mut acts = Activations::default();
        for s in &fine_val {
            if let Some(surv) = sample_survivor(&prefix, &s.raster)? {
                scores.push(model.class_score(&shape_indexed_features(&s.raster, &surv.shape), &mut acts));
            }
        }
        let threshold = calibrate_threshold(&scores, cfg.stage_recall)
            .ok_or_else(|| Error::training(&stage_name, "no held-out face survives the previous stages"))?;
        let stage = MlpStage {
            features: FeatureSpec::ShapeIndexed,
            threshold,
            model,
        };
        for (sh, s) in pos_shapes.iter_mut().zip(&fine_pos) {
            *sh = refine_shape(std::slice::from_ref(&stage), &s.raster, *sh);
        }
        fine.push(stage);
        let prefix = prefix_view(cfg, &v2b, &lab, &branches, &full, &fine, mean);
        let recall = sample_recall(&prefix, &fine_val_rasters)?;
        let (rm, surv) = removal(&prefix, &data.val_negatives, &cfg.mining)?;
        report.stages.push(StageReport {
            stage: stage_name.clone(),
            threshold: Some(threshold),
            train_positives: fine_pos.len(),
            train_negatives: negs.len(),
            negatives_short: short,
            recall,
            removal: rm,
            survivors_per_image: surv,
        });
        info!("{stage_name} trained: recall {recall:.4}, removal {rm:.6}");
        check_recall(&stage_name, recall, cfg)?;
    }
    for w in &warnings {
        warn!("{w}");
    }
    report.warnings = warnings;

    let model = FunnelModel {
        format: FORMAT_VERSION.into(),
        surf_pool_hash: default_pool_hash(),
        views: cfg.scheme.views(),
        topology: FunnelTopology {
            view_to_branch: v2b,
            lab_block_sizes: cfg.lab.block_sizes.clone(),
        },
        lab_cascades: lab,
        coarse_branches: branches
            .into_iter()
            .enumerate()
            .map(|(i, stages)| CoarseBranch {
                name: branch_name(i),
                stages,
            })
            .collect(),
        fine_cascade: fine,
        mean_shape: mean,
        metadata: TrainingMetadata {
            seed: cfg.seed,
            view_scheme: cfg.scheme.to_string(),
            positives: ds.positives.len(),
            negatives: ds.negatives.len(),
            augment_factor: cfg.augment_factor,
            lambda: cfg.fine_mlp.lambda,
            mean_shape_only,
        },
    };
    model.validate().map_err(|e| Error::training("assembly", e.to_string()))?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_shape_examples() {
        let a = Shape4::from_points([(0.3, 0.4), (0.6, 0.4), (0.5, 0.6), (0.45, 0.8)]);
        assert_eq!(mean_shape(&[a]).unwrap(), a);
        let reflected = Shape4::from_points([(0.7, 0.4), (0.4, 0.4), (0.5, 0.6), (0.55, 0.8)]);
        let m = mean_shape(&[a, reflected]).unwrap();
        for k in 0..4 {
            assert!((m.point(k).0 - 0.5).abs() < 1e-12);
        }
        assert!(matches!(mean_shape(&[]), Err(Error::Training { .. })));
    }

    #[test]
    fn derived_seeds_differ_by_task() {
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
    }

    #[test]
    fn config_validation() {
        assert!(FunnelTrainConfig::default().validate().is_ok());
        let bad = [
            FunnelTrainConfig {
                branches: Some(vec![0, 0, 2, 0, 0]),
                ..Default::default()
            },
            FunnelTrainConfig {
                branches: Some(vec![0, 0]),
                ..Default::default()
            },
            FunnelTrainConfig {
                coarse_groups: vec![2, 4],
                ..Default::default()
            },
            FunnelTrainConfig {
                stage_recall: 1.5,
                ..Default::default()
            },
            FunnelTrainConfig {
                augment_factor: 0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn empty_dataset_is_a_training_error() {
        let ds = Dataset::default();
        assert!(matches!(
            train_funnel(&ds, &FunnelTrainConfig::default()),
            Err(Error::Training { .. })
        ));
    }
}
