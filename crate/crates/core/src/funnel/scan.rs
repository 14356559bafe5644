//! Running a (possibly partial) funnel over pyramid levels.

use std::time::{Duration, Instant};

use crate::cascade::{union_propose, FeatureSource, FeatureSpec, LabCascadeModel, MlpStage, Proposal, ViewSet};
use crate::error::Result;
use crate::features::lab::LabFeatureMap;
use crate::features::surf::{default_surf_pool, surf_descriptor_into, SurfPatch, SURF_DIM};
use crate::features::Shape4;
use crate::funnel::model::FunnelModel;
use crate::imaging::{enumerate_windows, GrayImage, IntegralImage, PyramidLevel, WindowRect, WINDOW_SIZE};
use crate::neural::{Activations, Head};

/// Windows alive after each stage, summed over levels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageCounters {
    pub levels: usize,
    pub lab_maps_built: usize,
    /// Windows on the scan grid of every level.
    pub windows: usize,
    pub after_stage1: usize,
    pub after_stage2: usize,
    /// Windows accepted by the first fine stage.
    pub after_stage3a: usize,
    pub after_stage3: usize,
    /// Detections left after NMS.
    pub after_nms: usize,
    /// Coarse branch runs (one per window and distinct branch).
    pub branch_evaluations: usize,
}

impl StageCounters {
    pub fn add(&mut self, o: &StageCounters) {
        self.levels += o.levels;
        self.lab_maps_built += o.lab_maps_built;
        self.windows += o.windows;
        self.after_stage1 += o.after_stage1;
        self.after_stage2 += o.after_stage2;
        self.after_stage3a += o.after_stage3a;
        self.after_stage3 += o.after_stage3;
        self.after_nms += o.after_nms;
        self.branch_evaluations += o.branch_evaluations;
    }
}

/// Wall time per stage. With several threads these are sums over workers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub pyramid: Duration,
    /// Integral image and LAB map construction.
    pub lab_map: Duration,
    pub stage1: Duration,
    pub stage2: Duration,
    pub stage3: Duration,
    pub nms: Duration,
    pub total: Duration,
}

impl StageTimings {
    pub fn add(&mut self, o: &StageTimings) {
        self.pyramid += o.pyramid;
        self.lab_map += o.lab_map;
        self.stage1 += o.stage1;
        self.stage2 += o.stage2;
        self.stage3 += o.stage3;
        self.nms += o.nms;
        self.total += o.total;
    }

    /// Named stage times in pipeline order (total excluded).
    pub fn stages(&self) -> [(&'static str, Duration); 6] {
        [
            ("pyramid", self.pyramid),
            ("lab_map", self.lab_map),
            ("stage1", self.stage1),
            ("stage2", self.stage2),
            ("stage3", self.stage3),
            ("nms", self.nms),
        ]
    }
}

/// A window that passed every stage of a [`CascadeView`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Survivor {
    /// Window in level coordinates (`scale_index` names the level).
    pub window: WindowRect,
    pub views: ViewSet,
    /// Class output of the last stage run, or 1 if no MLP stage ran.
    pub score: f64,
    /// Shape estimate in window-normalised coordinates.
    pub shape: Shape4,
}

/// Borrowed prefix of a funnel: any number of LAB cascades (none means
/// accept everything), any number of stages per coarse branch, and any
/// number of fine stages.
#[derive(Clone, Debug)]
pub struct CascadeView<'a> {
    pub lab: &'a [LabCascadeModel],
    pub block_sizes: &'a [(usize, usize)],
    pub view_to_branch: &'a [usize],
    pub branches: Vec<&'a [MlpStage]>,
    pub fine: &'a [MlpStage],
    pub mean_shape: Shape4,
    pub pool: Vec<SurfPatch>,
}

impl<'a> CascadeView<'a> {
    /// The whole model.
    pub fn full(model: &'a FunnelModel) -> Self {
        CascadeView {
            lab: &model.lab_cascades,
            block_sizes: &model.topology.lab_block_sizes,
            view_to_branch: &model.topology.view_to_branch,
            branches: model.coarse_branches.iter().map(|b| b.stages.as_slice()).collect(),
            fine: &model.fine_cascade,
            mean_shape: model.mean_shape,
            pool: default_surf_pool(),
        }
    }

    /// The model cut after `coarse` stages per branch and `fine` fine stages.
    pub fn prefix(model: &'a FunnelModel, coarse: usize, fine: usize) -> Self {
        let mut v = CascadeView::full(model);
        v.branches = model
            .coarse_branches
            .iter()
            .map(|b| &b.stages[..coarse.min(b.stages.len())])
            .collect();
        v.fine = &model.fine_cascade[..fine.min(model.fine_cascade.len())];
        v
    }

    pub fn view_count(&self) -> usize {
        self.view_to_branch.len()
    }

    fn branch_mask(&self, views: ViewSet) -> u64 {
        views.iter().fold(0u64, |m, v| m | 1 << self.view_to_branch[v])
    }

    /// Runs the prefix over one pyramid level.
    pub fn scan_level(
        &self,
        level: &GrayImage,
        scale_index: usize,
        stride: usize,
        counters: &mut StageCounters,
        timings: &mut StageTimings,
    ) -> Result<Vec<Survivor>> {
        let windows = enumerate_windows(level.width(), level.height(), WINDOW_SIZE, stride, scale_index)?;
        counters.levels += 1;
        counters.windows += windows.len();
        if windows.len() == 0 {
            return Ok(Vec::new());
        }

        let t = Instant::now();
        let ii = IntegralImage::new(level);
        let map = if self.lab.is_empty() {
            None
        } else {
            counters.lab_maps_built += 1;
            Some(LabFeatureMap::from_integral(&ii, self.block_sizes)?)
        };
        timings.lab_map += t.elapsed();

        let t = Instant::now();
        let proposals = match &map {
            Some(map) => union_propose(self.lab, map, windows),
            None => {
                let all = ViewSet::all(self.view_count());
                windows.map(|window| Proposal { window, views: all }).collect()
            }
        };
        counters.after_stage1 += proposals.len();
        timings.stage1 += t.elapsed();
        if proposals.is_empty() {
            return Ok(Vec::new());
        }

        let src = FeatureSource {
            image: level,
            integral: &ii,
            pool: &self.pool,
        };
        let mut scratch = Scratch::new(self.pool.len());

        let t = Instant::now();
        let mut verified = Vec::with_capacity(proposals.len());
        for p in proposals {
            let mut mask = self.branch_mask(p.views);
            let mut best: Option<f64> = None;
            scratch.reset_window();
            while mask != 0 {
                let b = mask.trailing_zeros() as usize;
                mask &= mask - 1;
                counters.branch_evaluations += 1;
                if let Some(score) = self.run_branch(b, &src, &p.window, &mut scratch) {
                    best = Some(best.map_or(score, |s: f64| s.max(score)));
                }
            }
            if let Some(score) = best {
                verified.push((p, score));
            }
        }
        counters.after_stage2 += verified.len();
        timings.stage2 += t.elapsed();

        let t = Instant::now();
        let mut out = Vec::with_capacity(verified.len());
        for (p, coarse_score) in verified {
            let mut shape = self.mean_shape;
            let mut score = coarse_score;
            let mut alive = true;
            for (k, stage) in self.fine.iter().enumerate() {
                src.extract(&stage.features, &p.window, &shape, &mut scratch.features);
                let r = stage.verify_with(&scratch.features, &mut scratch.acts);
                score = r.score;
                if !r.accept {
                    alive = false;
                    break;
                }
                if k == 0 {
                    counters.after_stage3a += 1;
                }
                if let Some(s) = r.shape {
                    shape = s;
                }
            }
            if alive {
                out.push(Survivor {
                    window: p.window,
                    views: p.views,
                    score,
                    shape,
                });
            }
        }
        counters.after_stage3 += out.len();
        timings.stage3 += t.elapsed();
        Ok(out)
    }

    /// Score of the last stage if every stage of branch `b` accepts.
    fn run_branch(&self, b: usize, src: &FeatureSource, window: &WindowRect, scratch: &mut Scratch) -> Option<f64> {
        let mut score = 1.0;
        for stage in self.branches[b] {
            match &stage.features {
                FeatureSpec::Surf { groups } => {
                    scratch.features.clear();
                    for &g in groups {
                        scratch.ensure_descriptor(src, window, g);
                        scratch.features.extend_from_slice(&scratch.surf[g * SURF_DIM..(g + 1) * SURF_DIM]);
                    }
                }
                spec => src.extract(spec, window, &self.mean_shape, &mut scratch.features),
            }
            let r = stage.verify_with(&scratch.features, &mut scratch.acts);
            debug_assert!(stage.model.head() == Head::Plain || r.shape.is_some());
            if !r.accept {
                return None;
            }
            score = r.score;
        }
        Some(score)
    }
}

/// Per-level buffers, including a per-window cache of SURF descriptors so
/// patches shared by stages or branches are computed once.
struct Scratch {
    features: Vec<f64>,
    acts: Activations,
    surf: Vec<f64>,
    computed: Vec<bool>,
}

impl Scratch {
    fn new(pool_size: usize) -> Self {
        Scratch {
            features: Vec::new(),
            acts: Activations::default(),
            surf: vec![0.0; pool_size * SURF_DIM],
            computed: vec![false; pool_size],
        }
    }

    fn reset_window(&mut self) {
        self.computed.fill(false);
    }

    fn ensure_descriptor(&mut self, src: &FeatureSource, window: &WindowRect, g: usize) {
        if !self.computed[g] {
            let slot = &mut self.surf[g * SURF_DIM..(g + 1) * SURF_DIM];
            surf_descriptor_into(src.integral, window, &src.pool[g], slot);
            self.computed[g] = true;
        }
    }
}

/// Survivors of a scan plus the levels they refer to.
#[derive(Clone, Debug)]
pub struct ScanResult {
    pub levels: Vec<PyramidLevel>,
    pub survivors: Vec<Survivor>,
    pub counters: StageCounters,
    pub timings: StageTimings,
}

impl ScanResult {
    /// The 40x40 raster of a survivor.
    pub fn crop(&self, s: &Survivor) -> GrayImage {
        self.levels[s.window.scale_index]
            .image
            .crop(s.window.rect())
            .expect("survivor windows lie inside their level")
    }
}
